#pragma once

#include <stdexcept>
#include <string>

namespace ono {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

#define ONO_DEFINE_ERROR(Name)                                        \
  class Name : public Error {                                         \
  public:                                                             \
    explicit Name(const std::string& msg) : Error(#Name ": " + msg) {} \
  }

ONO_DEFINE_ERROR(ShapeMismatch);
ONO_DEFINE_ERROR(NotPositiveDefinite);
ONO_DEFINE_ERROR(SingularFactor);
ONO_DEFINE_ERROR(NoConvergence);
ONO_DEFINE_ERROR(NotScalarLoss);
ONO_DEFINE_ERROR(TapeReused);
ONO_DEFINE_ERROR(UninitializedBuffer);
ONO_DEFINE_ERROR(MeshTooSmall);
ONO_DEFINE_ERROR(ZeroTarget);
ONO_DEFINE_ERROR(NonFiniteGradient);
ONO_DEFINE_ERROR(StepOutOfRange);
ONO_DEFINE_ERROR(NotAGrid);
ONO_DEFINE_ERROR(IncompatibleFactor);
ONO_DEFINE_ERROR(BadMagic);
ONO_DEFINE_ERROR(VersionUnsupported);
ONO_DEFINE_ERROR(TruncatedFile);
ONO_DEFINE_ERROR(ChecksumMismatch);

#undef ONO_DEFINE_ERROR

}  // namespace ono

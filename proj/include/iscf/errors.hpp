#pragma once

#include <stdexcept>
#include <string>

namespace iscf {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define ISCF_DEFINE_ERROR(Name)        \
  class Name : public Error {          \
   public:                             \
    using Error::Error;                \
  };

ISCF_DEFINE_ERROR(ShapeMismatch)
ISCF_DEFINE_ERROR(AxisError)
ISCF_DEFINE_ERROR(CountMismatch)
ISCF_DEFINE_ERROR(InvalidPermutation)
ISCF_DEFINE_ERROR(NonIntegralOutputExtent)
ISCF_DEFINE_ERROR(NotScalar)
ISCF_DEFINE_ERROR(DetachedFromTape)
ISCF_DEFINE_ERROR(BadInputExtent)
ISCF_DEFINE_ERROR(OddGrid)
ISCF_DEFINE_ERROR(OddChannels)
ISCF_DEFINE_ERROR(InvalidConfig)
ISCF_DEFINE_ERROR(IoError)
ISCF_DEFINE_ERROR(FormatError)
ISCF_DEFINE_ERROR(MissingGradient)
ISCF_DEFINE_ERROR(NonFiniteLoss)
ISCF_DEFINE_ERROR(MissingMask)
ISCF_DEFINE_ERROR(MalformedPnm)
ISCF_DEFINE_ERROR(ExtentMismatch)
ISCF_DEFINE_ERROR(InvalidSpec)

#undef ISCF_DEFINE_ERROR

}  // namespace iscf

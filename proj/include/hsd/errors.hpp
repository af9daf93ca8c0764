#pragma once

#include <stdexcept>
#include <string>

namespace hsd {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define HSD_DEFINE_ERROR(Name)               \
  class Name : public Error {                \
   public:                                   \
    using Error::Error;                      \
  }

HSD_DEFINE_ERROR(ShapeError);
HSD_DEFINE_ERROR(TaxonomyError);
HSD_DEFINE_ERROR(RangeError);
HSD_DEFINE_ERROR(ConfigError);
HSD_DEFINE_ERROR(EmptyRegionError);
HSD_DEFINE_ERROR(NumericalError);
HSD_DEFINE_ERROR(InsufficientDataError);
HSD_DEFINE_ERROR(InvariantError);
HSD_DEFINE_ERROR(SpecError);
HSD_DEFINE_ERROR(PairingError);
HSD_DEFINE_ERROR(ParamsError);
HSD_DEFINE_ERROR(IoError);
HSD_DEFINE_ERROR(ContractError);

#undef HSD_DEFINE_ERROR

}  // namespace hsd

#include "il7/error.hpp"

namespace il7 {

int exit_code(ErrorClass cls) noexcept {
  switch (cls) {
    case ErrorClass::Validation:
      return 2;
    case ErrorClass::Numerical:
      return 3;
    case ErrorClass::Io:
      return 4;
  }
  return 1;
}

}  // namespace il7

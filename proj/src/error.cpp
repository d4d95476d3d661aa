#include "phaseformer/error.hpp"

namespace phaseformer {

const char* error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::dimension: return "dimension error";
    case ErrorKind::index: return "index error";
    case ErrorKind::argument: return "argument error";
    case ErrorKind::segment: return "segment error";
    case ErrorKind::aggregation: return "aggregation error";
    case ErrorKind::config: return "config error";
    case ErrorKind::format: return "format error";
    case ErrorKind::training: return "training error";
    case ErrorKind::input: return "input error";
    case ErrorKind::io: return "io error";
  }
  return "error";
}

}  // namespace phaseformer

#include "probekit/error.hpp"

namespace probekit {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::usage: return "usage";
    case ErrorKind::io: return "io";
    case ErrorKind::data: return "data";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::internal: break;
  }
  return "internal";
}

}  // namespace probekit

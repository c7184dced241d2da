#ifndef RORRLAB_FORMAT_HPP
#define RORRLAB_FORMAT_HPP

#include <charconv>
#include <string>

namespace rorrlab {

// Shortest representation that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace rorrlab

#endif

#ifndef RORRLAB_CLI_HPP
#define RORRLAB_CLI_HPP

#include <iosfwd>
#include <string>
#include <vector>

namespace rorrlab::cli {

// Runs one command line (without the program name) and returns the process
// exit status: 0 success, 1 validation, 2 data, 3 numeric error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// FNV-1a 64-bit, as lowercase hex.
std::string fnv1a_hex(const std::string& bytes);

}  // namespace rorrlab::cli

#endif

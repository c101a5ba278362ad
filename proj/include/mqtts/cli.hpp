#pragma once

// Command-line front end. All verbs are implemented as a library call so
// the binary stays a thin wrapper and tests can drive commands in
// process. Exit codes: 0 ok, 2 bad configuration or arguments, 3 file
// I/O or manifest problems, 4 completed with a truncation warning.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace mqtts {

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

// convenience overload for tests
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

std::vector<std::int32_t> parse_phone_list(const std::string& text);
std::vector<double> parse_double_list(const std::string& text);

}  // namespace mqtts

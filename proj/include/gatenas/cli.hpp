#ifndef GATENAS_CLI_HPP
#define GATENAS_CLI_HPP

#include <iosfwd>
#include <string>
#include <vector>

namespace gatenas {

// Exit codes: 0 success, 1 runtime failure, 2 invalid configuration or
// arguments. Failures print a JSON error record to `err` and, when the output
// directory is known, write it to error.json there.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_command(int argc, char** argv);

} // namespace gatenas

#endif // GATENAS_CLI_HPP

#pragma once

#include <string>
#include <vector>

namespace layerprune::cli {

// Runs one command line (without the program name). Errors are reported as
// a JSON object on stderr; the return value is the process exit code:
// 0 ok, 1 rerun mismatch or internal error, 2 config, 3 model/shape,
// 4 device, 5 no results.
int run(std::vector<std::string> args);

}  // namespace layerprune::cli

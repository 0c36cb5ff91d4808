#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace evalverse {

// Command line entry point. `args` excludes the program name. Arguments that
// start with an option (no subcommand) are treated as `eval`.
//
//   eval    --ckpt_path M [--h6_en --mt_bench ...] [--data_parallel N]
//           [--fixture F | --runners R] [--storage DIR]
//   report  [--models a,b] [--criteria x,y] [--json] [--storage DIR]
//   import  --fixture F [--storage DIR]
//   serve   [--listen host:port] [--fixture F | --runners R] [--storage DIR]
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace evalverse

#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "xmodal/gradcheck.hpp"

namespace xmodal::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 1,    // bad flags, config keys, missing output directory
  kRuntime = 2,  // numeric failure, unreadable inputs, failed gradient check
};

struct CliHooks {
  // Appended to the standard gradcheck probes.
  std::vector<GradProbe> extra_probes;
  // UTC timestamp for manifests; defaults to the system clock.
  std::function<std::string()> clock;
};

// args excludes the program name. Everything the commands print goes to out/err.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
            const CliHooks& hooks = {});

}  // namespace xmodal::cli

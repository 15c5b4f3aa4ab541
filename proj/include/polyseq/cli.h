//
// PolySeq - Copyright 2026 The PolySeq Authors.
// SPDX-License-Identifier: Apache-2.0
//

#ifndef POLYSEQ_CLI_H_
#define POLYSEQ_CLI_H_

#include <iosfwd>
#include <string>
#include <vector>

namespace polyseq::cli {

enum ExitCode {
  kOk = 0,
  kInputError = 2,
  kConfigError = 3,
  kNumericalError = 4,
};

/// Runs the `polyseq` command line; `args` excludes the program name.
int run(const std::vector<std::string> &args, std::ostream &out,
        std::ostream &err);

}  // namespace polyseq::cli

#endif  // POLYSEQ_CLI_H_

//
// PolySeq - Copyright 2026 The PolySeq Authors.
// SPDX-License-Identifier: Apache-2.0
//

#ifndef POLYSEQ_IO_H_
#define POLYSEQ_IO_H_

#include <filesystem>
#include <string>
#include <string_view>

namespace polyseq {

/// Writes to a temporary sibling, then renames over `path`. Parent
/// directories are created. Throws IoError.
void write_file_atomic(const std::filesystem::path &path,
                       std::string_view content);

/// Whole file as bytes. Throws IoError.
std::string read_file(const std::filesystem::path &path);

/// Worker count from POLYSEQ_THREADS (default: hardware concurrency, >= 1).
unsigned worker_threads();

}  // namespace polyseq

#endif  // POLYSEQ_IO_H_

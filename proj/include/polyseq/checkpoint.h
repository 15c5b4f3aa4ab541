//
// PolySeq - Copyright 2026 The PolySeq Authors.
// SPDX-License-Identifier: Apache-2.0
//

#ifndef POLYSEQ_CHECKPOINT_H_
#define POLYSEQ_CHECKPOINT_H_

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "polyseq/optim.h"
#include "polyseq/tensor.h"

namespace polyseq {

enum class DType { kF32, kF64 };

struct StoredTensor {
  tensor::Shape shape;
  DType dtype = DType::kF32;
  std::vector<double> values;  // widened on load; narrowed on save
};

/// File layout:
///
///   POLYSEQ-CKPT-1
///   meta <key> <single-line JSON>
///   tensor <name> <f32|f64> <d0,d1,...> <offset> <nbytes>
///   end
///   <little-endian blob>
///
/// Offsets are relative to the first byte after the "end" line.
struct Checkpoint {
  static constexpr const char *kMagic = "POLYSEQ-CKPT-1";

  std::map<std::string, nlohmann::json> meta;
  std::map<std::string, StoredTensor> tensors;

  /// Atomic write. Throws IoError.
  void save(const std::filesystem::path &path) const;
  /// Throws IoError on a missing or malformed file.
  static Checkpoint load(const std::filesystem::path &path);
};

/// Stores `params` under "param/<name>".
template <class T>
void put_params(Checkpoint &ckpt, const ParamStore<T> &params);

/// Copies every "param/<name>" entry whose name is in `params` and whose
/// shape matches; returns the names loaded. With `strict`, a missing or
/// mis-shaped parameter throws StateError.
template <class T>
std::vector<std::string> get_params(const Checkpoint &ckpt,
                                    ParamStore<T> &params, bool strict);

/// Moments under "adamw.m/<name>", "adamw.v/<name>", step in meta.
template <class T>
void put_optimizer(Checkpoint &ckpt, const AdamW<T> &opt,
                   const ParamStore<T> &params);
template <class T>
void get_optimizer(const Checkpoint &ckpt, AdamW<T> &opt);

}  // namespace polyseq

#endif  // POLYSEQ_CHECKPOINT_H_

//
// PolySeq - Copyright 2026 The PolySeq Authors.
// SPDX-License-Identifier: Apache-2.0
//

#include "polyseq/checkpoint.h"

#include <bit>
#include <cstring>
#include <sstream>

#include "polyseq/error.h"
#include "polyseq/io.h"

namespace polyseq {
namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

std::string shape_field(const tensor::Shape &shape) {
  if (shape.empty())
    return "-";
  std::string s;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0)
      s += ',';
    s += std::to_string(shape[i]);
  }
  return s;
}

tensor::Shape parse_shape(const std::string &field) {
  tensor::Shape shape;
  if (field == "-")
    return shape;
  std::stringstream ss(field);
  std::string part;
  while (std::getline(ss, part, ','))
    shape.push_back(std::stoull(part));
  return shape;
}

}  // namespace

void Checkpoint::save(const std::filesystem::path &path) const {
  std::string header = std::string(kMagic) + "\n";
  for (const auto &[key, value]: meta) {
    if (key.find_first_of(" \n") != std::string::npos)
      throw IoError("checkpoint meta key contains whitespace: " + key);
    header += "meta " + key + " " + value.dump() + "\n";
  }

  std::string blob;
  for (const auto &[name, t]: tensors) {
    if (name.find_first_of(" \n") != std::string::npos)
      throw IoError("checkpoint tensor name contains whitespace: " + name);
    if (tensor::numel(t.shape) != t.values.size())
      throw IoError("checkpoint tensor '" + name + "' has inconsistent size");
    const std::size_t offset = blob.size();
    if (t.dtype == DType::kF32) {
      for (double v: t.values) {
        const float f = static_cast<float>(v);
        blob.append(reinterpret_cast<const char *>(&f), sizeof f);
      }
    } else {
      for (double v: t.values)
        blob.append(reinterpret_cast<const char *>(&v), sizeof v);
    }
    header += "tensor " + name + " "
              + (t.dtype == DType::kF32 ? "f32" : "f64") + " "
              + shape_field(t.shape) + " " + std::to_string(offset) + " "
              + std::to_string(blob.size() - offset) + "\n";
  }
  header += "end\n";
  write_file_atomic(path, header + blob);
}

Checkpoint Checkpoint::load(const std::filesystem::path &path) {
  if (!std::filesystem::exists(path))
    throw IoError("checkpoint not found: " + path.string());
  const std::string bytes = read_file(path);
  const std::string where = "checkpoint " + path.string();

  std::size_t pos = 0;
  auto next_line = [&]() -> std::string {
    const std::size_t nl = bytes.find('\n', pos);
    if (nl == std::string::npos)
      throw IoError(where + ": truncated header");
    std::string line = bytes.substr(pos, nl - pos);
    pos = nl + 1;
    return line;
  };

  if (next_line() != kMagic)
    throw IoError(where + ": bad magic (expected " + std::string(kMagic) + ")");

  struct Entry {
    std::string name;
    DType dtype;
    tensor::Shape shape;
    std::size_t offset;
    std::size_t nbytes;
  };
  Checkpoint ckpt;
  std::vector<Entry> entries;
  for (;;) {
    const std::string line = next_line();
    if (line == "end")
      break;
    if (line.rfind("meta ", 0) == 0) {
      const std::size_t sp = line.find(' ', 5);
      if (sp == std::string::npos)
        throw IoError(where + ": malformed meta line");
      try {
        ckpt.meta[line.substr(5, sp - 5)] =
            nlohmann::json::parse(line.substr(sp + 1));
      } catch (const nlohmann::json::exception &e) {
        throw IoError(where + ": bad meta JSON: " + e.what());
      }
    } else if (line.rfind("tensor ", 0) == 0) {
      std::istringstream ss(line.substr(7));
      Entry e;
      std::string dtype;
      std::string shape;
      if (!(ss >> e.name >> dtype >> shape >> e.offset >> e.nbytes))
        throw IoError(where + ": malformed tensor line");
      if (dtype == "f32")
        e.dtype = DType::kF32;
      else if (dtype == "f64")
        e.dtype = DType::kF64;
      else
        throw IoError(where + ": unknown dtype " + dtype);
      try {
        e.shape = parse_shape(shape);
      } catch (const std::exception &) {
        throw IoError(where + ": bad shape " + shape);
      }
      entries.push_back(std::move(e));
    } else {
      throw IoError(where + ": unexpected header line");
    }
  }

  const std::size_t blob = pos;
  for (const Entry &e: entries) {
    const std::size_t width = e.dtype == DType::kF32 ? 4 : 8;
    const std::size_t n = tensor::numel(e.shape);
    if (e.nbytes != n * width || blob + e.offset + e.nbytes > bytes.size())
      throw IoError(where + ": tensor '" + e.name + "' out of bounds");
    StoredTensor t;
    t.shape = e.shape;
    t.dtype = e.dtype;
    t.values.resize(n);
    const char *src = bytes.data() + blob + e.offset;
    for (std::size_t i = 0; i < n; ++i) {
      if (e.dtype == DType::kF32) {
        float f;
        std::memcpy(&f, src + i * 4, 4);
        t.values[i] = f;
      } else {
        std::memcpy(&t.values[i], src + i * 8, 8);
      }
    }
    ckpt.tensors.emplace(e.name, std::move(t));
  }
  return ckpt;
}

template <class T>
void put_params(Checkpoint &ckpt, const ParamStore<T> &params) {
  for (const auto &[name, t]: params) {
    StoredTensor s;
    s.shape = t.shape();
    s.dtype = sizeof(T) == 4 ? DType::kF32 : DType::kF64;
    s.values.assign(t.data().begin(), t.data().end());
    ckpt.tensors["param/" + name] = std::move(s);
  }
}

template <class T>
std::vector<std::string> get_params(const Checkpoint &ckpt,
                                    ParamStore<T> &params, bool strict) {
  std::vector<std::string> loaded;
  for (auto &[name, t]: params) {
    auto it = ckpt.tensors.find("param/" + name);
    if (it == ckpt.tensors.end() || it->second.shape != t.shape()) {
      if (strict)
        throw StateError("checkpoint lacks a matching tensor for parameter '"
                         + name + "'");
      continue;
    }
    auto data = t.data();
    for (std::size_t i = 0; i < data.size(); ++i)
      data[i] = static_cast<T>(it->second.values[i]);
    loaded.push_back(name);
  }
  return loaded;
}

template <class T>
void put_optimizer(Checkpoint &ckpt, const AdamW<T> &opt,
                   const ParamStore<T> &params) {
  for (const auto &[name, t]: params) {
    auto m = opt.first_moments().find(name);
    auto v = opt.second_moments().find(name);
    if (m == opt.first_moments().end() || v == opt.second_moments().end())
      continue;
    ckpt.tensors["adamw.m/" + name] = {t.shape(), DType::kF64, m->second};
    ckpt.tensors["adamw.v/" + name] = {t.shape(), DType::kF64, v->second};
  }
  ckpt.meta["adamw_step"] = opt.step_count();
}

template <class T>
void get_optimizer(const Checkpoint &ckpt, AdamW<T> &opt) {
  for (const auto &[key, t]: ckpt.tensors) {
    if (key.rfind("adamw.m/", 0) == 0)
      opt.first_moments()[key.substr(8)] = t.values;
    else if (key.rfind("adamw.v/", 0) == 0)
      opt.second_moments()[key.substr(8)] = t.values;
  }
  if (auto it = ckpt.meta.find("adamw_step"); it != ckpt.meta.end())
    opt.set_step_count(it->second.get<long>());
}

template void put_params<float>(Checkpoint &, const ParamStore<float> &);
template void put_params<double>(Checkpoint &, const ParamStore<double> &);
template std::vector<std::string> get_params<float>(const Checkpoint &,
                                                    ParamStore<float> &, bool);
template std::vector<std::string> get_params<double>(const Checkpoint &,
                                                     ParamStore<double> &,
                                                     bool);
template void put_optimizer<float>(Checkpoint &, const AdamW<float> &,
                                   const ParamStore<float> &);
template void put_optimizer<double>(Checkpoint &, const AdamW<double> &,
                                    const ParamStore<double> &);
template void get_optimizer<float>(const Checkpoint &, AdamW<float> &);
template void get_optimizer<double>(const Checkpoint &, AdamW<double> &);

}  // namespace polyseq

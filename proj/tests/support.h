//
// PolySeq - Copyright 2026 The PolySeq Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Shared helpers for the test binaries: seeded generators, a brute-force
// graph isomorphism check and scratch directories.

#ifndef POLYSEQ_TESTS_SUPPORT_H_
#define POLYSEQ_TESTS_SUPPORT_H_

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <tuple>
#include <unistd.h>
#include <vector>

#include "polyseq/smiles.h"

namespace polyseq::testing {

inline std::filesystem::path source_dir() { return POLYSEQ_SOURCE_DIR; }
inline std::filesystem::path data_dir() { return source_dir() / "data"; }

class ScratchDir {
public:
  explicit ScratchDir(const std::string &tag) {
    static std::atomic<int> counter {0};
    path_ = std::filesystem::temp_directory_path()
            / ("polyseq-" + tag + "-" + std::to_string(::getpid()) + "-"
               + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir &) = delete;
  ScratchDir &operator=(const ScratchDir &) = delete;

  const std::filesystem::path &path() const { return path_; }
  std::filesystem::path operator/(const std::string &name) const {
    return path_ / name;
  }

private:
  std::filesystem::path path_;
};

// --- random SMILES -----------------------------------------------------------

struct GeneratedSmiles {
  std::string text;
  int atoms = 0;
  // Multi-letter element symbols written, keyed by symbol.
  std::map<std::string, int> long_elements;
};

class SmilesGenerator {
public:
  explicit SmilesGenerator(std::uint64_t seed): rng_(seed) { }

  // A connected fragment of at most `max_atoms` atoms (at least 1),
  // optionally capped by `*` on both ends.
  GeneratedSmiles fragment(int max_atoms, bool polymer) {
    out_ = {};
    budget_ = max_atoms;
    open_rings_.clear();
    used_digits_.clear();
    if (polymer && budget_ >= 3) {
      out_.text += "*";
      ++out_.atoms;
      budget_ -= 2;
      chain(0);
      out_.text += "*";
      ++out_.atoms;
    } else {
      chain(0);
    }
    close_all();
    return out_;
  }

  // Up to `parts` '.'-joined fragments.
  GeneratedSmiles molecule(int max_atoms, bool polymer, int parts = 1) {
    GeneratedSmiles all;
    const int n = 1 + static_cast<int>(rng_() % parts);
    for (int p = 0; p < n; ++p) {
      GeneratedSmiles g = fragment(std::max(1, max_atoms / n), polymer);
      if (p)
        all.text += ".";
      all.text += g.text;
      all.atoms += g.atoms;
      for (auto &[k, v]: g.long_elements)
        all.long_elements[k] += v;
    }
    return all;
  }

  std::mt19937_64 &rng() { return rng_; }

private:
  bool chance(double p) {
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng_) < p;
  }
  template <class C>
  const auto &pick(const C &c) {
    return c[rng_() % c.size()];
  }

  void atom(int depth) {
    static const std::vector<std::string> organic = {
        "C", "C", "C", "C", "N", "O", "O", "S", "F", "Cl", "Br", "I", "P"};
    static const std::vector<std::string> bracket = {
        "[Si]", "[SiH2]", "[Se]", "[Na+]", "[Li+]", "[NH3+]", "[O-]",
        "[C@H]", "[C@@H]", "[NH]", "[B-]", "[Fe+2]"};
    if (depth == 0 && budget_ >= 6 && chance(0.08)) {
      const std::string d = fresh_digit();
      out_.text += "c" + d + "ccccc" + d;
      out_.atoms += 6;
      budget_ -= 6;
      release(d);
      return;
    }
    const std::string &a = chance(0.25) ? pick(bracket) : pick(organic);
    out_.text += a;
    ++out_.atoms;
    --budget_;
    for (const char *sym: {"Cl", "Br", "Si", "Se", "Na", "Li", "Fe"})
      if (a.find(sym) != std::string::npos)
        ++out_.long_elements[sym];
  }

  void bond() {
    if (chance(0.12))
      out_.text += pick(std::vector<std::string> {"=", "#", "-", "/", "\\"});
  }

  void chain(int depth) {
    atom(depth);
    while (budget_ > 0) {
      // ring closures only on the top-level chain
      if (depth == 0) {
        for (std::size_t r = 0; r < open_rings_.size();) {
          if (open_rings_[r].age >= 2 && chance(0.5)) {
            out_.text += open_rings_[r].digit;
            ++budget_;
            release(open_rings_[r].digit);
            open_rings_.erase(open_rings_.begin() + r);
          } else {
            ++r;
          }
        }
        const bool fresh_here =
            std::any_of(open_rings_.begin(), open_rings_.end(),
                        [](const Ring &r) { return r.age == 0; });
        if (!fresh_here && open_rings_.size() < 2 && budget_ >= 3
            && chance(0.2)) {
          const std::string d = fresh_digit();
          open_rings_.push_back({d, 0, out_.text.size()});
          out_.text += d;
          // Held back for the carbon close_all() may need.
          --budget_;
        }
      }
      if (depth < 2 && budget_ >= 2 && chance(0.25)) {
        out_.text += "(";
        bond();
        const int saved = budget_;
        budget_ = 1 + static_cast<int>(rng_() % std::min(3, budget_ - 1));
        const int branch = budget_;
        chain(depth + 1);
        budget_ = saved - (branch - budget_);
        out_.text += ")";
        if (budget_ <= 0)
          break;
      }
      if (chance(depth == 0 ? 0.1 : 0.4))
        break;
      bond();
      atom(depth);
      if (depth == 0)
        for (Ring &ring: open_rings_)
          ++ring.age;
    }
  }

  void close_all() {
    // Close remaining rings by appending a carbon per ring after the chain;
    // such carbons attach to the last atom, so ring size stays >= 3.
    while (!open_rings_.empty()) {
      const Ring ring = open_rings_.back();
      const std::string &digit = ring.digit;
      open_rings_.pop_back();
      if (ring.age < 2) {
        // Not enough atoms since opening; drop the digit instead.
        out_.text.erase(ring.offset, digit.size());
      } else {
        // Close on a tail atom placed before any trailing '*'.
        const bool star = !out_.text.empty() && out_.text.back() == '*';
        if (star)
          out_.text.pop_back();
        out_.text += "C" + digit;
        ++out_.atoms;
        if (star)
          out_.text += "*";
      }
      release(ring.digit);
    }
  }

  std::string fresh_digit() {
    static const std::vector<std::string> digits = {
        "1", "2", "3", "4", "5", "6", "7", "8", "9", "%10", "%11", "%23"};
    for (int tries = 0; tries < 64; ++tries) {
      const std::string &d = pick(digits);
      if (std::find(used_digits_.begin(), used_digits_.end(), d)
          == used_digits_.end()) {
        used_digits_.push_back(d);
        return d;
      }
    }
    return "%99";
  }
  void release(const std::string &d) {
    used_digits_.erase(std::remove(used_digits_.begin(), used_digits_.end(), d),
                       used_digits_.end());
  }

  std::mt19937_64 rng_;
  GeneratedSmiles out_;
  int budget_ = 0;
  struct Ring {
    std::string digit;
    int age = 0;
    std::size_t offset = 0;
  };
  std::vector<Ring> open_rings_;
  std::vector<std::string> used_digits_;
};

// --- isomorphism -------------------------------------------------------------

// Backtracking isomorphism on atom labels (element, aromaticity, charge,
// bracket H) and bond orders. Stereo is ignored.
inline bool isomorphic(const smiles::MolecularGraph &a,
                       const smiles::MolecularGraph &b) {
  const int n = a.num_atoms();
  if (n != b.num_atoms() || a.num_bonds() != b.num_bonds())
    return false;
  auto label = [](const smiles::Atom &x) {
    return std::tuple(x.element, x.aromatic, x.charge, x.explicit_h.value_or(-1));
  };
  std::vector<std::vector<int>> order_a(n, std::vector<int>(n, 0));
  std::vector<std::vector<int>> order_b(n, std::vector<int>(n, 0));
  for (const auto &bd: a.bonds)
    order_a[bd.a][bd.b] = order_a[bd.b][bd.a] = static_cast<int>(bd.order);
  for (const auto &bd: b.bonds)
    order_b[bd.a][bd.b] = order_b[bd.b][bd.a] = static_cast<int>(bd.order);

  // Visit a's atoms in BFS order so each new atom usually has a mapped
  // neighbor to check against.
  std::vector<int> visit;
  std::vector<bool> seen(n, false);
  for (int s = 0; s < n; ++s) {
    if (seen[s])
      continue;
    seen[s] = true;
    visit.push_back(s);
    for (std::size_t h = visit.size() - 1; h < visit.size(); ++h)
      for (int t = 0; t < n; ++t)
        if (order_a[visit[h]][t] && !seen[t]) {
          seen[t] = true;
          visit.push_back(t);
        }
  }

  std::vector<int> map(n, -1);
  std::vector<bool> used(n, false);
  std::function<bool(int)> extend = [&](int depth) {
    if (depth == n)
      return true;
    const int u = visit[depth];
    for (int v = 0; v < n; ++v) {
      if (used[v] || label(a.atoms[u]) != label(b.atoms[v])
          || a.degree(u) != b.degree(v))
        continue;
      bool ok = true;
      for (int k = 0; k < depth && ok; ++k) {
        const int w = visit[k];
        ok = order_a[u][w] == order_b[v][map[w]];
      }
      if (!ok)
        continue;
      map[u] = v;
      used[v] = true;
      if (extend(depth + 1))
        return true;
      used[v] = false;
      map[u] = -1;
    }
    return false;
  };
  return extend(0);
}

// Fragment lists match as multisets under isomorphism.
inline bool isomorphic(const std::vector<smiles::MolecularGraph> &a,
                       const std::vector<smiles::MolecularGraph> &b) {
  if (a.size() != b.size())
    return false;
  std::vector<bool> used(b.size(), false);
  for (const auto &g: a) {
    bool found = false;
    for (std::size_t j = 0; j < b.size() && !found; ++j)
      if (!used[j] && isomorphic(g, b[j]))
        used[j] = found = true;
    if (!found)
      return false;
  }
  return true;
}

}  // namespace polyseq::testing

#endif  // POLYSEQ_TESTS_SUPPORT_H_

//
// PolySeq - Copyright 2026 The PolySeq Authors.
// SPDX-License-Identifier: Apache-2.0
//

#include "polyseq/smiles.h"

#include <algorithm>
#include <array>
#include <cctype>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <tuple>
#include <unordered_set>

#include "polyseq/error.h"

namespace polyseq::smiles {
namespace {

constexpr std::array<std::string_view, 118> kElementSymbols = {
    "H",  "He", "Li", "Be", "B",  "C",  "N",  "O",  "F",  "Ne", "Na", "Mg",
    "Al", "Si", "P",  "S",  "Cl", "Ar", "K",  "Ca", "Sc", "Ti", "V",  "Cr",
    "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As", "Se", "Br", "Kr",
    "Rb", "Sr", "Y",  "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd",
    "In", "Sn", "Sb", "Te", "I",  "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd",
    "Pm", "Sm", "Eu", "Gd", "Tb", "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf",
    "Ta", "W",  "Re", "Os", "Ir", "Pt", "Au", "Hg", "Tl", "Pb", "Bi", "Po",
    "At", "Rn", "Fr", "Ra", "Ac", "Th", "Pa", "U",  "Np", "Pu", "Am", "Cm",
    "Bk", "Cf", "Es", "Fm", "Md", "No", "Lr", "Rf", "Db", "Sg", "Bh", "Hs",
    "Mt", "Ds", "Rg", "Cn", "Nh", "Fl", "Mc", "Lv", "Ts", "Og",
};

bool is_organic_subset(std::string_view e) {
  return e == "B" || e == "C" || e == "N" || e == "O" || e == "P" || e == "S"
         || e == "F" || e == "Cl" || e == "Br" || e == "I";
}

bool is_bare_aromatic(std::string_view e) {
  return e == "B" || e == "C" || e == "N" || e == "O" || e == "P" || e == "S";
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

constexpr int kRingPlaceholder = -2;

struct BondSpec {
  BondOrder order = BondOrder::kSingle;
  BondStereo stereo = BondStereo::kNone;
  std::size_t pos = 0;
};

struct OpenRing {
  int atom = -1;
  std::optional<BondSpec> bond;
  std::size_t slot = 0;
  std::size_t pos = 0;
};

class Parser {
public:
  explicit Parser(std::string_view text): text_(text) { }

  std::vector<MolecularGraph> run() {
    if (text_.empty())
      throw SyntaxError(0, "empty SMILES");

    while (pos_ < text_.size()) {
      const char c = text_[pos_];
      if (static_cast<unsigned char>(c) > 127)
        throw SyntaxError(pos_, "non-ASCII character");

      switch (c) {
      case '.':
        finish_component();
        ++pos_;
        break;
      case '(':
        open_branch();
        break;
      case ')':
        close_branch();
        break;
      case '-':
      case '=':
      case '#':
      case ':':
      case '/':
      case '\\':
        read_bond(c);
        break;
      case '%':
      case '0':
      case '1':
      case '2':
      case '3':
      case '4':
      case '5':
      case '6':
      case '7':
      case '8':
      case '9':
        read_ring_closure();
        break;
      case '[':
        read_bracket_atom();
        break;
      default:
        read_bare_atom();
        break;
      }
    }
    finish_component();
    return std::move(out_);
  }

private:
  void finish_component() {
    if (graph_.atoms.empty())
      throw SyntaxError(pos_, "empty component");
    if (bond_)
      throw SyntaxError(bond_->pos, "bond symbol without a following atom");
    if (!branches_.empty())
      throw SyntaxError(branch_pos_.back(), "unclosed '('");
    if (!rings_.empty()) {
      const auto &[digit, ring] = *rings_.begin();
      throw SyntaxError(ring.pos, "unmatched ring closure "
                                      + std::to_string(digit));
    }

    for (std::size_t i = 0; i < graph_.atoms.size(); ++i) {
      Atom &atom = graph_.atoms[i];
      if (atom.chirality != Chirality::kNone)
        atom.chiral_neighbors = order_[i];
    }

    out_.push_back(std::move(graph_));
    graph_ = MolecularGraph {};
    order_.clear();
    prev_ = -1;
  }

  void open_branch() {
    if (prev_ < 0)
      throw SyntaxError(pos_, "branch without a preceding atom");
    if (bond_)
      throw SyntaxError(bond_->pos, "bond symbol before '('");
    if (pos_ + 1 < text_.size() && text_[pos_ + 1] == ')')
      throw SyntaxError(pos_, "empty branch");
    branches_.push_back(prev_);
    branch_pos_.push_back(pos_);
    ++pos_;
  }

  void close_branch() {
    if (branches_.empty())
      throw SyntaxError(pos_, "unmatched ')'");
    if (bond_)
      throw SyntaxError(bond_->pos, "bond symbol before ')'");
    prev_ = branches_.back();
    branches_.pop_back();
    branch_pos_.pop_back();
    ++pos_;
  }

  void read_bond(char c) {
    if (bond_)
      throw SyntaxError(pos_, "consecutive bond symbols");
    if (prev_ < 0)
      throw SyntaxError(pos_, "bond symbol without a preceding atom");
    BondSpec spec;
    spec.pos = pos_;
    switch (c) {
    case '-':
      spec.order = BondOrder::kSingle;
      break;
    case '=':
      spec.order = BondOrder::kDouble;
      break;
    case '#':
      spec.order = BondOrder::kTriple;
      break;
    case ':':
      spec.order = BondOrder::kAromatic;
      break;
    case '/':
      spec.stereo = BondStereo::kUp;
      break;
    case '\\':
      spec.stereo = BondStereo::kDown;
      break;
    default:
      break;
    }
    bond_ = spec;
    ++pos_;
  }

  void read_ring_closure() {
    const std::size_t start = pos_;
    if (prev_ < 0)
      throw SyntaxError(pos_, "ring closure without a preceding atom");

    int digit = 0;
    if (text_[pos_] == '%') {
      if (pos_ + 2 >= text_.size()
          || !std::isdigit(static_cast<unsigned char>(text_[pos_ + 1]))
          || !std::isdigit(static_cast<unsigned char>(text_[pos_ + 2])))
        throw SyntaxError(pos_, "'%' must be followed by two digits");
      digit = (text_[pos_ + 1] - '0') * 10 + (text_[pos_ + 2] - '0');
      pos_ += 3;
    } else {
      digit = text_[pos_] - '0';
      ++pos_;
    }

    const int atom = prev_;
    auto it = rings_.find(digit);
    if (it == rings_.end()) {
      OpenRing ring;
      ring.atom = atom;
      ring.bond = bond_;
      ring.slot = order_[atom].size();
      ring.pos = start;
      order_[atom].push_back(kRingPlaceholder);
      rings_.emplace(digit, ring);
      bond_.reset();
      return;
    }

    const OpenRing ring = it->second;
    rings_.erase(it);
    if (ring.atom == atom)
      throw SyntaxError(start, "ring closure bonds an atom to itself");
    if (graph_.find_bond(ring.atom, atom) >= 0)
      throw SyntaxError(start, "ring closure duplicates an existing bond");

    if (ring.bond && bond_ && ring.bond->order != bond_->order)
      throw SyntaxError(start, "conflicting ring closure bond orders");

    Bond bond;
    if (bond_ && bond_->stereo != BondStereo::kNone) {
      bond.a = atom;
      bond.b = ring.atom;
      bond.stereo = bond_->stereo;
    } else {
      bond.a = ring.atom;
      bond.b = atom;
      if (ring.bond)
        bond.stereo = ring.bond->stereo;
    }
    const std::optional<BondSpec> &spec = bond_ ? bond_ : ring.bond;
    bond.order = resolve_order(spec, ring.atom, atom, start);
    graph_.bonds.push_back(bond);

    order_[ring.atom][ring.slot] = atom;
    order_[atom].push_back(ring.atom);
    bond_.reset();
  }

  BondOrder resolve_order(const std::optional<BondSpec> &spec, int a, int b,
                          std::size_t pos) const {
    const bool both_aromatic =
        graph_.atoms[a].aromatic && graph_.atoms[b].aromatic;
    if (!spec)
      return both_aromatic ? BondOrder::kAromatic : BondOrder::kSingle;
    if (spec->order == BondOrder::kAromatic && !both_aromatic)
      throw SyntaxError(pos, "aromatic bond between non-aromatic atoms");
    return spec->order;
  }

  void read_bare_atom() {
    const std::size_t start = pos_;
    Atom atom;
    const char c = text_[pos_];
    const char next = pos_ + 1 < text_.size() ? text_[pos_ + 1] : '\0';
    if (c == '*') {
      atom.element = "*";
      ++pos_;
    } else if (c == 'C' && next == 'l') {
      atom.element = "Cl";
      pos_ += 2;
    } else if (c == 'B' && next == 'r') {
      atom.element = "Br";
      pos_ += 2;
    } else if (std::string_view("BCNOPSFI").find(c) != std::string_view::npos) {
      atom.element = std::string(1, c);
      ++pos_;
    } else if (std::string_view("bcnops").find(c) != std::string_view::npos) {
      atom.element = std::string(1, static_cast<char>(std::toupper(c)));
      atom.aromatic = true;
      ++pos_;
    } else {
      throw SyntaxError(pos_, std::string("unknown symbol '") + c + "'");
    }
    add_atom(std::move(atom), start);
  }

  void read_bracket_atom() {
    const std::size_t start = pos_;
    std::size_t p = pos_ + 1;
    auto at = [&](std::size_t i) -> char {
      return i < text_.size() ? text_[i] : '\0';
    };

    if (std::isdigit(static_cast<unsigned char>(at(p))))
      throw SyntaxError(p, "isotopes are not supported");

    Atom atom;
    const char c = at(p);
    if (c == '*') {
      atom.element = "*";
      ++p;
    } else if (std::islower(static_cast<unsigned char>(c))) {
      const std::string two {c, at(p + 1)};
      if (two == "se" || two == "as") {
        atom.element = std::string {static_cast<char>(std::toupper(c)),
                                    at(p + 1)};
        p += 2;
      } else if (std::string_view("bcnops").find(c) != std::string_view::npos) {
        atom.element = std::string(1, static_cast<char>(std::toupper(c)));
        ++p;
      } else {
        throw SyntaxError(p, std::string("unknown aromatic symbol '") + c
                                 + "'");
      }
      atom.aromatic = true;
    } else if (std::isupper(static_cast<unsigned char>(c))) {
      const std::string two {c, at(p + 1)};
      if (std::islower(static_cast<unsigned char>(at(p + 1)))
          && is_element_symbol(two)) {
        atom.element = two;
        p += 2;
      } else if (is_element_symbol(std::string(1, c))) {
        atom.element = std::string(1, c);
        ++p;
      } else {
        throw SyntaxError(p, std::string("unknown element '") + c + "'");
      }
    } else {
      throw SyntaxError(p, "expected an element symbol after '['");
    }

    if (at(p) == '@') {
      if (at(p + 1) == '@') {
        atom.chirality = Chirality::kClockwise;
        p += 2;
      } else {
        atom.chirality = Chirality::kCounterClockwise;
        ++p;
      }
      const char cls = at(p);
      if (cls == 'T' || cls == 'A' || cls == 'S' || cls == 'O'
          || std::isdigit(static_cast<unsigned char>(cls)) || cls == '@')
        throw SyntaxError(p, "extended chirality classes are not supported");
    }

    int hydrogens = 0;
    if (at(p) == 'H') {
      ++p;
      hydrogens = 1;
      if (std::isdigit(static_cast<unsigned char>(at(p)))) {
        hydrogens = at(p) - '0';
        ++p;
      }
    }
    atom.explicit_h = hydrogens;

    if (at(p) == '+' || at(p) == '-') {
      const char sign = at(p);
      const std::size_t charge_pos = p;
      int magnitude = 1;
      ++p;
      if (std::isdigit(static_cast<unsigned char>(at(p)))) {
        magnitude = 0;
        while (std::isdigit(static_cast<unsigned char>(at(p)))) {
          magnitude = magnitude * 10 + (at(p) - '0');
          ++p;
          if (magnitude > 99)
            break;
        }
      } else {
        while (at(p) == sign) {
          ++magnitude;
          ++p;
        }
      }
      if (magnitude > 4)
        throw SyntaxError(charge_pos, "charge outside [-4, +4]");
      atom.charge = sign == '+' ? magnitude : -magnitude;
    }

    if (at(p) == ':')
      throw SyntaxError(p, "atom classes are not supported");
    if (at(p) != ']') {
      if (at(p) == '\0')
        throw SyntaxError(start, "unclosed '['");
      throw SyntaxError(p, std::string("unexpected '") + at(p)
                               + "' in bracket atom");
    }
    pos_ = p + 1;
    add_atom(std::move(atom), start);
  }

  void add_atom(Atom atom, std::size_t pos) {
    const int idx = graph_.num_atoms();
    atom.index = idx;
    const bool chiral_h =
        atom.chirality != Chirality::kNone && atom.explicit_h.value_or(0) == 1;
    graph_.atoms.push_back(std::move(atom));
    order_.emplace_back();

    if (prev_ >= 0) {
      Bond bond;
      bond.a = prev_;
      bond.b = idx;
      bond.order = resolve_order(bond_, prev_, idx, bond_ ? bond_->pos : pos);
      if (bond_)
        bond.stereo = bond_->stereo;
      graph_.bonds.push_back(bond);
      order_[prev_].push_back(idx);
      order_[idx].push_back(prev_);
    } else if (bond_) {
      throw SyntaxError(bond_->pos, "bond symbol without a preceding atom");
    }
    if (chiral_h)
      order_[idx].push_back(kImplicitHydrogen);

    bond_.reset();
    prev_ = idx;
  }

  std::string_view text_;
  std::size_t pos_ = 0;

  MolecularGraph graph_;
  std::vector<std::vector<int>> order_;
  int prev_ = -1;
  std::vector<int> branches_;
  std::vector<std::size_t> branch_pos_;
  std::optional<BondSpec> bond_;
  std::map<int, OpenRing> rings_;
  std::vector<MolecularGraph> out_;
};

// ---------------------------------------------------------------------------
// Writer
// ---------------------------------------------------------------------------

bool odd_permutation(const std::vector<int> &reference,
                     const std::vector<int> &now) {
  std::vector<int> positions;
  positions.reserve(now.size());
  for (int x: now) {
    auto it = std::find(reference.begin(), reference.end(), x);
    positions.push_back(static_cast<int>(it - reference.begin()));
  }
  int inversions = 0;
  for (std::size_t i = 0; i < positions.size(); ++i)
    for (std::size_t j = i + 1; j < positions.size(); ++j)
      inversions += positions[i] > positions[j] ? 1 : 0;
  return inversions % 2 == 1;
}

bool same_members(std::vector<int> a, std::vector<int> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  return a == b;
}

struct RingEntry {
  int bond;
  int partner;
};

class Writer {
public:
  Writer(const MolecularGraph &graph, std::span<const int> priority,
         bool stereo)
      : graph_(graph), priority_(priority), stereo_(stereo),
        adjacency_(graph.adjacency()) {
    for (auto &nbrs: adjacency_) {
      std::stable_sort(nbrs.begin(), nbrs.end(),
                       [&](const auto &x, const auto &y) {
                         return priority_[x.first] < priority_[y.first];
                       });
    }
    const std::size_t n = graph.atoms.size();
    visited_.assign(n, 0);
    bond_used_.assign(graph.bonds.size(), 0);
    parent_.assign(n, -1);
    parent_bond_.assign(n, -1);
    children_.resize(n);
    opens_.resize(n);
    closes_.resize(n);
    bond_digit_.assign(graph.bonds.size(), -1);
    digit_used_.fill(false);
  }

  std::string run(int start) {
    dfs(start);
    emit(start);
    return std::move(out_);
  }

private:
  void dfs(int u) {
    visited_[u] = 1;
    for (const auto &[v, b]: adjacency_[u]) {
      if (b == parent_bond_[u])
        continue;
      if (visited_[v]) {
        if (!bond_used_[b]) {
          bond_used_[b] = 1;
          opens_[v].push_back({b, u});
          closes_[u].push_back({b, v});
        }
        continue;
      }
      bond_used_[b] = 1;
      parent_[v] = u;
      parent_bond_[v] = b;
      children_[u].push_back(v);
      dfs(v);
    }
  }

  void emit(int u) {
    if (parent_bond_[u] >= 0)
      out_ += bond_symbol(parent_bond_[u], parent_[u], u);

    std::vector<int> ring_order;
    std::string ring_text;
    for (const RingEntry &e: closes_[u]) {
      const int digit = bond_digit_[e.bond];
      ring_text += digit_text(digit);
      digit_used_[digit] = false;
      ring_order.push_back(e.partner);
    }
    for (const RingEntry &e: opens_[u]) {
      const int digit = allocate_digit();
      bond_digit_[e.bond] = digit;
      ring_text += bond_symbol(e.bond, u, e.partner);
      ring_text += digit_text(digit);
      ring_order.push_back(e.partner);
    }

    out_ += atom_symbol(u, ring_order);
    out_ += ring_text;

    const auto &kids = children_[u];
    for (std::size_t i = 0; i < kids.size(); ++i) {
      if (i + 1 < kids.size()) {
        out_ += '(';
        emit(kids[i]);
        out_ += ')';
      } else {
        emit(kids[i]);
      }
    }
  }

  int allocate_digit() {
    for (int d = 1; d < static_cast<int>(digit_used_.size()); ++d) {
      if (!digit_used_[d]) {
        digit_used_[d] = true;
        return d;
      }
    }
    throw Error("more than 99 simultaneously open rings");
  }

  static std::string digit_text(int digit) {
    if (digit < 10)
      return std::string(1, static_cast<char>('0' + digit));
    return "%" + std::to_string(digit);
  }

  std::string bond_symbol(int bond_index, int from, int to) const {
    const Bond &bond = graph_.bonds[bond_index];
    const bool both_aromatic =
        graph_.atoms[from].aromatic && graph_.atoms[to].aromatic;
    switch (bond.order) {
    case BondOrder::kSingle:
      if (stereo_ && bond.stereo != BondStereo::kNone) {
        BondStereo dir = bond.stereo;
        if (bond.a != from)
          dir = dir == BondStereo::kUp ? BondStereo::kDown : BondStereo::kUp;
        return dir == BondStereo::kUp ? "/" : "\\";
      }
      return both_aromatic ? "-" : "";
    case BondOrder::kDouble:
      return "=";
    case BondOrder::kTriple:
      return "#";
    case BondOrder::kAromatic:
      return both_aromatic ? "" : ":";
    }
    return "";
  }

  std::string atom_symbol(int u, const std::vector<int> &ring_order) const {
    const Atom &atom = graph_.atoms[u];

    Chirality chirality = stereo_ ? atom.chirality : Chirality::kNone;
    if (chirality != Chirality::kNone) {
      std::vector<int> now;
      if (parent_[u] >= 0)
        now.push_back(parent_[u]);
      if (atom.explicit_h.value_or(0) == 1)
        now.push_back(kImplicitHydrogen);
      now.insert(now.end(), ring_order.begin(), ring_order.end());
      now.insert(now.end(), children_[u].begin(), children_[u].end());
      if (!same_members(now, atom.chiral_neighbors)) {
        chirality = Chirality::kNone;
      } else if (odd_permutation(atom.chiral_neighbors, now)) {
        chirality = chirality == Chirality::kClockwise
                        ? Chirality::kCounterClockwise
                        : Chirality::kClockwise;
      }
    }

    std::string symbol = atom.element;
    if (atom.aromatic)
      symbol[0] = static_cast<char>(std::tolower(symbol[0]));

    const bool bare_ok =
        atom.element == "*"
        || (is_organic_subset(atom.element)
            && (!atom.aromatic || is_bare_aromatic(atom.element)));
    const bool bracket = atom.explicit_h.has_value() || atom.charge != 0
                         || chirality != Chirality::kNone || !bare_ok;
    if (!bracket)
      return symbol;

    std::string text = "[" + symbol;
    if (chirality == Chirality::kCounterClockwise)
      text += "@";
    else if (chirality == Chirality::kClockwise)
      text += "@@";
    const int h = atom.explicit_h.value_or(0);
    if (h > 0) {
      text += "H";
      if (h > 1)
        text += std::to_string(h);
    }
    if (atom.charge != 0) {
      text += atom.charge > 0 ? "+" : "-";
      const int magnitude = std::abs(atom.charge);
      if (magnitude > 1)
        text += std::to_string(magnitude);
    }
    text += "]";
    return text;
  }

  const MolecularGraph &graph_;
  std::span<const int> priority_;
  bool stereo_;
  std::vector<std::vector<std::pair<int, int>>> adjacency_;

  std::vector<char> visited_;
  std::vector<char> bond_used_;
  std::vector<int> parent_;
  std::vector<int> parent_bond_;
  std::vector<std::vector<int>> children_;
  std::vector<std::vector<RingEntry>> opens_;
  std::vector<std::vector<RingEntry>> closes_;
  std::vector<int> bond_digit_;
  std::array<bool, 100> digit_used_ {};
  std::string out_;
};

// ---------------------------------------------------------------------------
// Canonical ranking
// ---------------------------------------------------------------------------

std::vector<int> dense_ranks(const std::vector<long long> &values) {
  std::vector<long long> sorted(values);
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  std::vector<int> ranks(values.size());
  for (std::size_t i = 0; i < values.size(); ++i)
    ranks[i] = static_cast<int>(
        std::lower_bound(sorted.begin(), sorted.end(), values[i])
        - sorted.begin());
  return ranks;
}

int count_classes(const std::vector<int> &ranks) {
  std::unordered_set<int> seen(ranks.begin(), ranks.end());
  return static_cast<int>(seen.size());
}

class CanonicalSearch {
public:
  explicit CanonicalSearch(const MolecularGraph &graph)
      : graph_(graph), adjacency_(graph.adjacency()) { }

  std::vector<int> run() {
    const int n = graph_.num_atoms();
    using Key = std::tuple<int, std::string, int, int, int>;
    std::vector<Key> keys(n);
    for (int i = 0; i < n; ++i) {
      const Atom &a = graph_.atoms[i];
      keys[i] = Key {static_cast<int>(adjacency_[i].size()), a.element,
                     a.aromatic ? 1 : 0, a.charge, a.explicit_h.value_or(-1)};
    }
    std::vector<Key> sorted(keys);
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    std::vector<int> ranks(n);
    for (int i = 0; i < n; ++i)
      ranks[i] = static_cast<int>(
          std::lower_bound(sorted.begin(), sorted.end(), keys[i])
          - sorted.begin());

    search(refine(std::move(ranks)));
    return best_ranks_;
  }

private:
  static constexpr int kLeafBudget = 4096;

  std::vector<int> refine(std::vector<int> ranks) const {
    const int n = graph_.num_atoms();
    int classes = count_classes(ranks);
    while (classes < n) {
      using Key = std::pair<int, std::vector<int>>;
      std::vector<Key> keys(n);
      for (int i = 0; i < n; ++i) {
        std::vector<int> env;
        env.reserve(adjacency_[i].size());
        for (const auto &[j, b]: adjacency_[i])
          env.push_back(ranks[j] * 8
                        + static_cast<int>(graph_.bonds[b].order));
        std::sort(env.begin(), env.end());
        keys[i] = Key {ranks[i], std::move(env)};
      }
      std::vector<Key> sorted(keys);
      std::sort(sorted.begin(), sorted.end());
      sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
      std::vector<int> next(n);
      for (int i = 0; i < n; ++i)
        next[i] = static_cast<int>(
            std::lower_bound(sorted.begin(), sorted.end(), keys[i])
            - sorted.begin());
      const int next_classes = count_classes(next);
      ranks = std::move(next);
      if (next_classes == classes)
        break;
      classes = next_classes;
    }
    return ranks;
  }

  void search(const std::vector<int> &ranks) {
    const int n = graph_.num_atoms();
    if (count_classes(ranks) == n) {
      ++leaves_;
      const int start = static_cast<int>(
          std::min_element(ranks.begin(), ranks.end()) - ranks.begin());
      std::string text = Writer(graph_, ranks, false).run(start);
      if (best_ranks_.empty() || text < best_text_) {
        best_text_ = std::move(text);
        best_ranks_ = ranks;
      }
      return;
    }

    // Smallest tied class; candidates in input-index order.
    std::map<int, std::vector<int>> classes;
    for (int i = 0; i < n; ++i)
      classes[ranks[i]].push_back(i);
    const std::vector<int> *tied = nullptr;
    int tied_rank = 0;
    for (const auto &[rank, members]: classes) {
      if (members.size() > 1) {
        tied = &members;
        tied_rank = rank;
        break;
      }
    }

    for (std::size_t c = 0; c < tied->size(); ++c) {
      if (c > 0 && leaves_ >= kLeafBudget)
        break;
      std::vector<long long> split(n);
      for (int i = 0; i < n; ++i)
        split[i] = 2LL * ranks[i];
      for (int member: *tied)
        if (member != (*tied)[c])
          split[member] = 2LL * tied_rank + 1;
      search(refine(dense_ranks(split)));
    }
  }

  const MolecularGraph &graph_;
  std::vector<std::vector<std::pair<int, int>>> adjacency_;
  int leaves_ = 0;
  std::string best_text_;
  std::vector<int> best_ranks_;
};

}  // namespace

bool is_element_symbol(std::string_view symbol) {
  return std::find(kElementSymbols.begin(), kElementSymbols.end(), symbol)
         != kElementSymbols.end();
}

std::vector<std::vector<std::pair<int, int>>>
MolecularGraph::adjacency() const {
  std::vector<std::vector<std::pair<int, int>>> adj(atoms.size());
  for (std::size_t i = 0; i < bonds.size(); ++i) {
    adj[bonds[i].a].emplace_back(bonds[i].b, static_cast<int>(i));
    adj[bonds[i].b].emplace_back(bonds[i].a, static_cast<int>(i));
  }
  return adj;
}

int MolecularGraph::find_bond(int a, int b) const {
  for (std::size_t i = 0; i < bonds.size(); ++i) {
    const Bond &bond = bonds[i];
    if ((bond.a == a && bond.b == b) || (bond.a == b && bond.b == a))
      return static_cast<int>(i);
  }
  return -1;
}

int MolecularGraph::degree(int atom) const {
  int d = 0;
  for (const Bond &bond: bonds)
    d += (bond.a == atom || bond.b == atom) ? 1 : 0;
  return d;
}

std::vector<MolecularGraph> parse_smiles(std::string_view text) {
  return Parser(text).run();
}

std::string write_smiles(const MolecularGraph &graph, int start_atom,
                         std::span<const int> priority, bool stereo) {
  const int n = graph.num_atoms();
  if (start_atom < 0 || start_atom >= n)
    throw Error("write_smiles: start atom " + std::to_string(start_atom)
                + " out of range");
  if (static_cast<int>(priority.size()) != n)
    throw Error("write_smiles: priority size mismatch");
  return Writer(graph, priority, stereo).run(start_atom);
}

std::string write_smiles(const MolecularGraph &graph, int start_atom) {
  const int n = graph.num_atoms();
  if (start_atom < 0 || start_atom >= n)
    throw Error("write_smiles: start atom " + std::to_string(start_atom)
                + " out of range");
  std::vector<int> priority(n);
  for (int i = 0; i < n; ++i)
    priority[i] = (i - start_atom + n) % n;
  return Writer(graph, priority, true).run(start_atom);
}

std::vector<int> canonical_ranks(const MolecularGraph &graph) {
  if (graph.atoms.empty())
    return {};
  return CanonicalSearch(graph).run();
}

std::string canonicalize(const MolecularGraph &graph) {
  if (graph.atoms.empty())
    return {};
  const std::vector<int> ranks = canonical_ranks(graph);
  const int start = static_cast<int>(
      std::min_element(ranks.begin(), ranks.end()) - ranks.begin());
  return Writer(graph, ranks, false).run(start);
}

std::string canonicalize(std::string_view smiles) {
  std::vector<std::string> parts;
  for (const MolecularGraph &g: parse_smiles(smiles))
    parts.push_back(canonicalize(g));
  std::sort(parts.begin(), parts.end());
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i > 0)
      out += '.';
    out += parts[i];
  }
  return out;
}

std::vector<std::string> enumerate_smiles(const MolecularGraph &graph,
                                          std::optional<int> limit) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (int i = 0; i < graph.num_atoms(); ++i) {
    if (limit && static_cast<int>(out.size()) >= *limit)
      break;
    std::string s = write_smiles(graph, i);
    if (seen.insert(s).second)
      out.push_back(std::move(s));
  }
  return out;
}

MolecularGraph relabel_atoms(const MolecularGraph &graph,
                             std::span<const int> perm) {
  const int n = graph.num_atoms();
  if (static_cast<int>(perm.size()) != n)
    throw Error("relabel_atoms: permutation size mismatch");
  MolecularGraph out;
  out.atoms.resize(n);
  for (int i = 0; i < n; ++i) {
    Atom atom = graph.atoms[i];
    atom.index = perm[i];
    for (int &nb: atom.chiral_neighbors)
      if (nb >= 0)
        nb = perm[nb];
    out.atoms[perm[i]] = std::move(atom);
  }
  out.bonds = graph.bonds;
  for (Bond &bond: out.bonds) {
    bond.a = perm[bond.a];
    bond.b = perm[bond.b];
  }
  return out;
}

}  // namespace polyseq::smiles

//
// PolySeq - Copyright 2026 The PolySeq Authors.
// SPDX-License-Identifier: Apache-2.0
//

#ifndef POLYSEQ_SMILES_H_
#define POLYSEQ_SMILES_H_

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace polyseq::smiles {

enum class Chirality : std::uint8_t {
  kNone,
  kCounterClockwise,  // @
  kClockwise,         // @@
};

enum class BondOrder : std::uint8_t {
  kSingle = 1,
  kDouble = 2,
  kTriple = 3,
  kAromatic = 4,
};

// Directional single-bond marker, read in the a -> b direction of the owning
// bond: kUp is '/', kDown is '\'.
enum class BondStereo : std::uint8_t {
  kNone,
  kUp,
  kDown,
};

// Sentinel used in Atom::chiral_neighbors for the bracket hydrogen.
inline constexpr int kImplicitHydrogen = -1;

struct Atom {
  std::string element;  // "*" for the polymer attachment point
  bool aromatic = false;
  int charge = 0;
  std::optional<int> explicit_h;  // set iff the atom was written in brackets
  Chirality chirality = Chirality::kNone;
  int index = 0;
  // Neighbor order that `chirality` refers to; only filled for chiral atoms.
  std::vector<int> chiral_neighbors;

  bool operator==(const Atom &) const = default;
};

struct Bond {
  int a = 0;
  int b = 0;
  BondOrder order = BondOrder::kSingle;
  BondStereo stereo = BondStereo::kNone;

  bool operator==(const Bond &) const = default;
};

class MolecularGraph {
public:
  std::vector<Atom> atoms;
  std::vector<Bond> bonds;

  int num_atoms() const { return static_cast<int>(atoms.size()); }
  int num_bonds() const { return static_cast<int>(bonds.size()); }

  // (neighbor atom, bond index) per atom, in bond insertion order.
  std::vector<std::vector<std::pair<int, int>>> adjacency() const;

  // Index into `bonds`, or -1.
  int find_bond(int a, int b) const;

  int degree(int atom) const;
};

/// Parses a SMILES string into one graph per '.'-separated component.
///
/// Supported: organic-subset and bracket atoms (charge, H count, @/@@), the
/// wildcard '*', aromatic lowercase symbols, branches, ring closures
/// including %nn, and the bond symbols - = # : / \. Isotopes, atom classes
/// and extended chirality classes are rejected.
///
/// Throws SyntaxError.
std::vector<MolecularGraph> parse_smiles(std::string_view text);

/// Depth-first SMILES of `graph` rooted at `start_atom`.
///
/// Neighbors are visited in the order of their indices rotated so that the
/// start atom comes first, which is what renumbering the atoms by rotation
/// and writing the result non-canonically produces. Aromatic atoms stay
/// lowercase; chirality and directional bonds are re-expressed for the new
/// traversal.
std::string write_smiles(const MolecularGraph &graph, int start_atom);

/// Lower-level writer: `priority[i]` orders neighbor visits (lower first).
/// With `stereo == false`, chirality marks and '/' '\' are dropped.
std::string write_smiles(const MolecularGraph &graph, int start_atom,
                         std::span<const int> priority, bool stereo);

/// Canonical atom ranks (a permutation of 0..n-1) from iterative
/// neighborhood refinement over element, charge, degree, aromaticity,
/// hydrogen count and bond orders. Stereo does not take part.
std::vector<int> canonical_ranks(const MolecularGraph &graph);

/// Deterministic stereo-free canonical SMILES; isomorphic graphs yield the
/// same string.
std::string canonicalize(const MolecularGraph &graph);

/// Canonical form of a full (possibly multi-component) SMILES string:
/// per-component canonical strings, sorted, joined by '.'.
std::string canonicalize(std::string_view smiles);

/// Rotational SMILES enumeration, exact duplicates removed, in start-atom
/// order. `limit`, when given, caps the result size.
std::vector<std::string> enumerate_smiles(const MolecularGraph &graph,
                                          std::optional<int> limit = {});

/// Relabels atoms so that old atom i becomes new atom perm[i].
MolecularGraph relabel_atoms(const MolecularGraph &graph,
                             std::span<const int> perm);

/// True for element symbols the parser accepts inside brackets.
bool is_element_symbol(std::string_view symbol);

}  // namespace polyseq::smiles

#endif  // POLYSEQ_SMILES_H_

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "enclave/kernels.hpp"

namespace enclave {

/// Cell of the 3-partitioned spacetree: level plus integer position within
/// the 3^level x 3^level grid of that level.
struct CellKey {
  int level = 0;
  int ix = 0;
  int iy = 0;

  auto operator<=>(const CellKey&) const = default;

  std::uint64_t packed() const {
    return (static_cast<std::uint64_t>(level) << 56) | (static_cast<std::uint64_t>(ix) << 28) |
           static_cast<std::uint64_t>(iy);
  }
  static CellKey unpack(std::uint64_t v) {
    return {static_cast<int>(v >> 56), static_cast<int>((v >> 28) & 0xFFFFFFF),
            static_cast<int>(v & 0xFFFFFFF)};
  }
  CellKey parent() const { return {level - 1, ix / 3, iy / 3}; }
  CellKey ancestor(int l) const;
  /// Child c in Morton order, c = cy * 3 + cx.
  CellKey child(int c) const { return {level + 1, ix * 3 + c % 3, iy * 3 + c / 3}; }
  int child_index() const { return (iy % 3) * 3 + ix % 3; }
  int coord(int axis) const { return axis == 0 ? ix : iy; }
};

struct CellKeyHash {
  std::size_t operator()(const CellKey& k) const { return std::hash<std::uint64_t>{}(k.packed()); }
};

struct FaceKey {
  int level = 0;
  int axis = 0;
  int line = 0;     // index of the grid line normal to `axis`
  int tangent = 0;  // cell index along the face

  auto operator<=>(const FaceKey&) const = default;
};

enum class NodeKind { Inner, UnrefinedFine, RefinedFine, Virtual, Supplemental };
const char* to_string(NodeKind k);

struct Node {
  CellKey key;
  NodeKind kind = NodeKind::UnrefinedFine;
  int parent = -1;
  int first_child = -1;                     // children are contiguous, Morton order
  std::array<int, 4> side_faces{-1, -1, -1, -1};  // face index per side

  bool has_children() const { return first_child >= 0; }
  bool is_real_leaf() const {
    return kind == NodeKind::UnrefinedFine || kind == NodeKind::RefinedFine;
  }
  bool carries_cell() const { return is_real_leaf() || kind == NodeKind::Virtual; }
};

enum class FaceKind { Regular, Child, Parent, Boundary };
enum class SideKind { Cell, Virtual, Refined, Domain };

struct FaceSide {
  SideKind kind = SideKind::Domain;
  int node = -1;
  CellKey key;    // cell, virtual or refined node key
  CellKey owner;  // real cell holding the data; the coarse cell for a virtual side
};

struct Face {
  int id = -1;
  FaceKey key;
  FaceKind kind = FaceKind::Regular;
  std::array<FaceSide, 2> sides;  // [0] behind the face along +axis, [1] in front
  int parent = -1;                // face index of the parent face (child faces)
  int delta = 0;                  // level difference to the parent face
  int offset = 0;                 // position within the parent face, in units of this face
  std::vector<int> children;      // face indices, ordered along the tangent

  int axis() const { return key.axis; }
  int level() const { return key.level; }
};

struct DomainBox {
  double x0 = 0.0;
  double y0 = 0.0;
  double width = 1.0;
  double height = 1.0;
};

struct MeshDelta {
  std::vector<CellKey> created_cells;
  std::vector<CellKey> removed_cells;
  std::vector<int> created_faces;  // ids
  std::vector<int> removed_faces;  // ids

  bool empty() const {
    return created_cells.empty() && removed_cells.empty() && created_faces.empty() &&
           removed_faces.empty();
  }
  void append(const MeshDelta& other);
};

class Mesh {
 public:
  static constexpr int kDefaultMaxDepth = 8;

  Mesh() = default;
  static Mesh build_uniform(int depth, DomainBox box = {}, bool periodic = true,
                            int max_depth = kDefaultMaxDepth);

  MeshDelta refine_cell(const CellKey& cell);
  MeshDelta coarsen_cluster(const CellKey& parent);
  /// Applies several coarsenings and refinements with a single rebuild.
  MeshDelta update(const std::vector<CellKey>& coarsen, const std::vector<CellKey>& refine);
  /// Applies `refine <level> <ix> <iy>` lines in order.
  MeshDelta apply_description(std::istream& in);
  MeshDelta load_description(const std::string& path);

  const std::vector<Node>& nodes() const { return nodes_; }
  const std::vector<Face>& faces() const { return faces_; }
  const Node& node(int i) const { return nodes_[i]; }
  const Face& face(int i) const { return faces_[i]; }
  /// Real leaves in space-filling-curve order (node indices).
  const std::vector<int>& cells() const { return cells_; }
  int find_node(const CellKey& key) const;
  int face_index(int id) const;
  int sfc_position(const CellKey& real_cell) const;

  int base_depth() const { return base_depth_; }
  int max_depth() const { return max_depth_; }
  int finest_level() const;
  bool periodic() const { return periodic_; }
  const DomainBox& box() const { return box_; }
  CellGeometry geometry(int level) const;
  std::array<double, 2> origin(const CellKey& key) const;
  bool is_refined(const CellKey& key) const { return refined_.count(key) != 0; }

  // Domain decomposition. Without one every cell belongs to rank 0.
  void set_owners(std::map<CellKey, int> owners, int ranks);
  int owner(const CellKey& real_cell) const;
  int rank_count() const { return ranks_; }
  int side_rank(const FaceSide& side) const;
  bool is_rank_boundary(const Face& face) const;

  /// Throws if a node-taxonomy or face invariant is violated.
  void check_invariants() const;

 private:
  struct LeafQuery {
    CellKey leaf;
    bool refined = false;  // the queried key itself is refined
  };

  void check_refinable(const CellKey& key) const;
  void check_coarsenable(const CellKey& key) const;
  void rebuild();
  LeafQuery find_leaf(const CellKey& key) const;
  bool neighbor(const CellKey& key, int axis, int dir, CellKey& out) const;
  FaceKey face_key(const CellKey& key, int side) const;
  int add_node(const CellKey& key, NodeKind kind, int parent);
  void build_real(int node);
  int descend_virtual(int coarse, const CellKey& target);
  std::pair<std::set<CellKey>, std::set<int>> snapshot() const;
  MeshDelta diff(const std::pair<std::set<CellKey>, std::set<int>>& before) const;

  int base_depth_ = 0;
  int max_depth_ = kDefaultMaxDepth;
  bool periodic_ = true;
  DomainBox box_;
  std::set<CellKey> refined_;
  std::map<FaceKey, int> face_ids_;
  int next_face_id_ = 0;
  std::unordered_map<CellKey, int, CellKeyHash> owners_;
  int ranks_ = 1;

  std::vector<Node> nodes_;
  std::vector<Face> faces_;
  std::vector<int> cells_;
  std::unordered_map<CellKey, int, CellKeyHash> node_of_;
  std::unordered_map<int, int> face_of_id_;
  std::unordered_map<CellKey, int, CellKeyHash> sfc_of_;
};

// --- traversals -----------------------------------------------------------

struct TraversalEvent {
  int sweep = 0;
  char kind = 'c';  // 'f' face, 'c' real cell, 'v' virtual cell
  std::int64_t entity = 0;
  int order = 0;
};

struct EventLog {
  std::vector<TraversalEvent> events;
  void write_csv(std::ostream& out) const;
};

struct TraversalVisitor {
  std::function<void(int face)> on_face;
  std::function<void(int node)> on_cell;
};

/// Post-order sweep: faces are reported at their first touch, always before
/// the adjacent cell; virtual cells precede the real cell containing them.
/// With rank >= 0 only cells owned by that rank (and the virtual cells of
/// those) are visited.
void primary_traversal(const Mesh& mesh, const TraversalVisitor& visitor, int rank = -1,
                       EventLog* log = nullptr, int sweep = 0);

/// Pre-order sweep over skeleton cells and their virtual descendants. Rank
/// boundary faces are reported in boundary_face_order once their local
/// adjacent cell has been visited.
void secondary_traversal(const Mesh& mesh, const TraversalVisitor& visitor, int rank = -1,
                         EventLog* log = nullptr, int sweep = 0);

enum class CellClass { Skeleton, Enclave };
CellClass classify_cell(const Mesh& mesh, int node);

/// Faces shared between ranks a and b, in the order both ranks use.
std::vector<int> boundary_face_order(const Mesh& mesh, int rank_a, int rank_b);

}  // namespace enclave

// SPDX-License-Identifier: Apache-2.0
#include "enclave/mesh.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <tuple>
#include <ostream>
#include <sstream>

#include "enclave/error.hpp"

namespace enclave {

namespace {

std::string describe(const CellKey& k) {
  return "(" + std::to_string(k.level) + "," + std::to_string(k.ix) + "," + std::to_string(k.iy) + ")";
}

}  // namespace

CellKey CellKey::ancestor(int l) const {
  const int s = ipow3(level - l);
  return {l, ix / s, iy / s};
}

const char* to_string(NodeKind k) {
  switch (k) {
    case NodeKind::Inner: return "inner";
    case NodeKind::UnrefinedFine: return "unrefined-fine";
    case NodeKind::RefinedFine: return "refined-fine";
    case NodeKind::Virtual: return "virtual";
    case NodeKind::Supplemental: return "supplemental";
  }
  return "?";
}

void MeshDelta::append(const MeshDelta& o) {
  created_cells.insert(created_cells.end(), o.created_cells.begin(), o.created_cells.end());
  removed_cells.insert(removed_cells.end(), o.removed_cells.begin(), o.removed_cells.end());
  created_faces.insert(created_faces.end(), o.created_faces.begin(), o.created_faces.end());
  removed_faces.insert(removed_faces.end(), o.removed_faces.begin(), o.removed_faces.end());
}

Mesh Mesh::build_uniform(int depth, DomainBox box, bool periodic, int max_depth) {
  if (depth < 1) throw ConfigError("build_uniform: depth must be >= 1");
  if (max_depth > 12) throw ConfigError("build_uniform: max depth above 12 is not representable");
  if (depth > max_depth)
    throw CapacityError("build_uniform: depth " + std::to_string(depth) + " exceeds maximum " +
                        std::to_string(max_depth));
  if (!(box.width > 0.0) || !(box.height > 0.0)) throw ConfigError("build_uniform: empty domain");
  Mesh m;
  m.base_depth_ = depth;
  m.max_depth_ = max_depth;
  m.periodic_ = periodic;
  m.box_ = box;
  for (int l = 0; l < depth; ++l) {
    const int n = ipow3(l);
    for (int iy = 0; iy < n; ++iy)
      for (int ix = 0; ix < n; ++ix) m.refined_.insert({l, ix, iy});
  }
  m.rebuild();
  return m;
}

int Mesh::finest_level() const {
  int l = 0;
  for (int c : cells_) l = std::max(l, nodes_[c].key.level);
  return l;
}

CellGeometry Mesh::geometry(int level) const {
  const double s = 1.0 / ipow3(level);
  return {box_.width * s, box_.height * s};
}

std::array<double, 2> Mesh::origin(const CellKey& key) const {
  const CellGeometry g = geometry(key.level);
  return {box_.x0 + key.ix * g.hx, box_.y0 + key.iy * g.hy};
}

int Mesh::find_node(const CellKey& key) const {
  auto it = node_of_.find(key);
  return it == node_of_.end() ? -1 : it->second;
}

int Mesh::face_index(int id) const {
  auto it = face_of_id_.find(id);
  return it == face_of_id_.end() ? -1 : it->second;
}

int Mesh::sfc_position(const CellKey& key) const {
  auto it = sfc_of_.find(key);
  if (it == sfc_of_.end()) throw InvalidTargetError("sfc_position: " + describe(key) + " is not a cell");
  return it->second;
}

void Mesh::set_owners(std::map<CellKey, int> owners, int ranks) {
  if (ranks < 1) throw ConfigError("set_owners: rank count must be >= 1");
  owners_ = {owners.begin(), owners.end()};
  ranks_ = ranks;
}

int Mesh::owner(const CellKey& key) const {
  auto it = owners_.find(key);
  return it == owners_.end() ? 0 : it->second;
}

int Mesh::side_rank(const FaceSide& side) const {
  switch (side.kind) {
    case SideKind::Cell:
    case SideKind::Virtual: return owner(side.owner);
    default: return -1;
  }
}

bool Mesh::is_rank_boundary(const Face& f) const {
  if (f.kind != FaceKind::Regular && f.kind != FaceKind::Child) return false;
  return side_rank(f.sides[0]) != side_rank(f.sides[1]);
}

Mesh::LeafQuery Mesh::find_leaf(const CellKey& key) const {
  for (int l = 0; l <= key.level; ++l) {
    CellKey a = key.ancestor(l);
    if (!refined_.count(a)) return {a, false};
  }
  return {key, true};
}

bool Mesh::neighbor(const CellKey& key, int axis, int dir, CellKey& out) const {
  const int n = ipow3(key.level);
  int c = key.coord(axis) + dir;
  if (c < 0 || c >= n) {
    if (!periodic_) return false;
    c = (c + n) % n;
  }
  out = key;
  (axis == 0 ? out.ix : out.iy) = c;
  return true;
}

FaceKey Mesh::face_key(const CellKey& key, int side) const {
  const int axis = side_axis(side);
  int line = key.coord(axis) + (side & 1);
  if (periodic_) line %= ipow3(key.level);
  return {key.level, axis, line, key.coord(1 - axis)};
}

int Mesh::add_node(const CellKey& key, NodeKind kind, int parent) {
  Node n;
  n.key = key;
  n.kind = kind;
  n.parent = parent;
  nodes_.push_back(n);
  const int idx = static_cast<int>(nodes_.size()) - 1;
  node_of_[key] = idx;
  return idx;
}

void Mesh::build_real(int node) {
  const CellKey key = nodes_[node].key;
  if (!refined_.count(key)) {
    nodes_[node].kind = NodeKind::UnrefinedFine;
    return;
  }
  nodes_[node].kind = NodeKind::Inner;
  const int first = static_cast<int>(nodes_.size());
  nodes_[node].first_child = first;
  for (int c = 0; c < 9; ++c) add_node(key.child(c), NodeKind::UnrefinedFine, node);
  for (int c = 0; c < 9; ++c) build_real(first + c);
}

int Mesh::descend_virtual(int coarse, const CellKey& target) {
  int cur = coarse;
  for (int l = nodes_[coarse].key.level + 1; l <= target.level; ++l) {
    if (!nodes_[cur].has_children()) {
      const int first = static_cast<int>(nodes_.size());
      const CellKey k = nodes_[cur].key;
      nodes_[cur].first_child = first;
      for (int c = 0; c < 9; ++c) add_node(k.child(c), NodeKind::Supplemental, cur);
    }
    cur = nodes_[cur].first_child + target.ancestor(l).child_index();
  }
  nodes_[cur].kind = NodeKind::Virtual;
  return cur;
}

void Mesh::rebuild() {
  nodes_.clear();
  node_of_.clear();
  add_node({0, 0, 0}, NodeKind::Inner, -1);
  build_real(0);

  cells_.clear();
  sfc_of_.clear();
  std::vector<int> stack{0};
  while (!stack.empty()) {
    const int n = stack.back();
    stack.pop_back();
    if (nodes_[n].has_children()) {
      for (int c = 8; c >= 0; --c) stack.push_back(nodes_[n].first_child + c);
    } else {
      sfc_of_[nodes_[n].key] = static_cast<int>(cells_.size());
      cells_.push_back(n);
    }
  }

  struct Pending {
    Face face;
    FaceKey parent_key;
  };
  std::map<FaceKey, Pending> built;
  for (int cell : cells_) {
    const CellKey x = nodes_[cell].key;
    for (int s = 0; s < 4; ++s) {
      const int axis = side_axis(s);
      const int dir = (s & 1) ? 1 : -1;
      const int here = (s & 1) ? 0 : 1;  // slot of x in face.sides
      const FaceKey fk = face_key(x, s);
      if (built.count(fk)) continue;
      Pending p;
      p.face.key = fk;
      FaceSide self{SideKind::Cell, -1, x, x};
      FaceSide& mine = p.face.sides[here];
      FaceSide& other = p.face.sides[1 - here];
      mine = self;
      CellKey nb;
      if (!neighbor(x, axis, dir, nb)) {
        p.face.kind = FaceKind::Boundary;
        other = FaceSide{};
      } else {
        const LeafQuery q = find_leaf(nb);
        if (q.refined) {
          p.face.kind = FaceKind::Parent;
          other = FaceSide{SideKind::Refined, -1, nb, nb};
        } else if (q.leaf.level == x.level) {
          p.face.kind = FaceKind::Regular;
          other = FaceSide{SideKind::Cell, -1, nb, nb};
        } else {
          p.face.kind = FaceKind::Child;
          other = FaceSide{SideKind::Virtual, -1, nb, q.leaf};
          p.face.delta = x.level - q.leaf.level;
          p.face.offset = x.coord(1 - axis) - q.leaf.coord(1 - axis) * ipow3(p.face.delta);
          p.parent_key = face_key(q.leaf, opposite_side(s));
        }
      }
      built.emplace(fk, std::move(p));
    }
  }

  // stable ids: keep the id of every surviving key, fresh ids for new keys
  std::map<FaceKey, int> ids;
  for (auto& [k, p] : built) {
    auto it = face_ids_.find(k);
    ids[k] = it != face_ids_.end() ? it->second : next_face_id_++;
  }
  face_ids_ = std::move(ids);

  faces_.clear();
  face_of_id_.clear();
  std::map<FaceKey, int> index_of;
  for (auto& [k, p] : built) {
    p.face.id = face_ids_[k];
    index_of[k] = static_cast<int>(faces_.size());
    face_of_id_[p.face.id] = static_cast<int>(faces_.size());
    faces_.push_back(p.face);
  }
  for (auto& [k, p] : built) {
    if (p.face.kind != FaceKind::Child) continue;
    auto it = index_of.find(p.parent_key);
    if (it == index_of.end() || faces_[it->second].kind != FaceKind::Parent)
      throw Error("mesh: child face without parent face");
    const int fi = index_of[k];
    faces_[fi].parent = it->second;
    faces_[it->second].children.push_back(fi);
  }
  for (Face& f : faces_) {
    std::sort(f.children.begin(), f.children.end(), [&](int a, int b) {
      const Face& fa = faces_[a];
      const Face& fb = faces_[b];
      return static_cast<long long>(fa.offset) * ipow3(fb.delta) <
             static_cast<long long>(fb.offset) * ipow3(fa.delta);
    });
  }

  for (int cell : cells_) {
    const CellKey x = nodes_[cell].key;
    for (int s = 0; s < 4; ++s) nodes_[cell].side_faces[s] = index_of[face_key(x, s)];
  }

  for (int fi = 0; fi < static_cast<int>(faces_.size()); ++fi) {
    for (int slot = 0; slot < 2; ++slot) {
      FaceSide& side = faces_[fi].sides[slot];
      if (side.kind == SideKind::Cell || side.kind == SideKind::Refined) {
        side.node = node_of_.at(side.key);
      } else if (side.kind == SideKind::Virtual) {
        const int coarse = node_of_.at(side.owner);
        const int v = descend_virtual(coarse, side.key);
        nodes_[coarse].kind = NodeKind::RefinedFine;
        side.node = v;
        const int axis = faces_[fi].key.axis;
        nodes_[v].side_faces[axis * 2 + (slot == 0 ? 1 : 0)] = fi;
      }
    }
  }
}

std::pair<std::set<CellKey>, std::set<int>> Mesh::snapshot() const {
  std::pair<std::set<CellKey>, std::set<int>> s;
  for (int c : cells_) s.first.insert(nodes_[c].key);
  for (const Face& f : faces_) s.second.insert(f.id);
  return s;
}

MeshDelta Mesh::diff(const std::pair<std::set<CellKey>, std::set<int>>& before) const {
  const auto after = snapshot();
  MeshDelta d;
  std::set_difference(after.first.begin(), after.first.end(), before.first.begin(),
                      before.first.end(), std::back_inserter(d.created_cells));
  std::set_difference(before.first.begin(), before.first.end(), after.first.begin(),
                      after.first.end(), std::back_inserter(d.removed_cells));
  std::set_difference(after.second.begin(), after.second.end(), before.second.begin(),
                      before.second.end(), std::back_inserter(d.created_faces));
  std::set_difference(before.second.begin(), before.second.end(), after.second.begin(),
                      after.second.end(), std::back_inserter(d.removed_faces));
  return d;
}

void Mesh::check_refinable(const CellKey& key) const {
  const int n = find_node(key);
  if (n < 0) throw InvalidTargetError("refine_cell: no node " + describe(key));
  const NodeKind kind = nodes_[n].kind;
  if (kind != NodeKind::UnrefinedFine && kind != NodeKind::RefinedFine)
    throw InvalidTargetError(std::string("refine_cell: cannot refine ") + to_string(kind) +
                             " node " + describe(key));
  if (key.level + 1 > max_depth_)
    throw CapacityError("refine_cell: level " + std::to_string(key.level + 1) +
                        " exceeds maximum depth " + std::to_string(max_depth_));
}

void Mesh::check_coarsenable(const CellKey& key) const {
  const int n = find_node(key);
  if (n < 0 || nodes_[n].kind != NodeKind::Inner)
    throw NotCoarsenableError("coarsen_cluster: " + describe(key) + " is not a refined cell");
  if (key.level == 0) throw NotCoarsenableError("coarsen_cluster: the root cannot be coarsened");
  for (int c = 0; c < 9; ++c)
    if (refined_.count(key.child(c)))
      throw NotCoarsenableError("coarsen_cluster: child " + describe(key.child(c)) +
                                " is refined");
}

MeshDelta Mesh::refine_cell(const CellKey& key) { return update({}, {key}); }

MeshDelta Mesh::coarsen_cluster(const CellKey& key) { return update({key}, {}); }

MeshDelta Mesh::update(const std::vector<CellKey>& coarsen, const std::vector<CellKey>& refine) {
  for (const CellKey& k : coarsen) check_coarsenable(k);
  for (const CellKey& k : refine) {
    check_refinable(k);
    for (const CellKey& c : coarsen)
      if (k.level == c.level + 1 && k.parent() == c)
        throw InvalidTargetError("update: " + describe(k) + " is refined and coarsened at once");
  }
  if (coarsen.empty() && refine.empty()) return {};
  const auto before = snapshot();
  for (const CellKey& k : coarsen) {
    refined_.erase(k);
    if (owners_.empty()) continue;
    const int r = owner(k.child(0));
    for (int c = 0; c < 9; ++c) owners_.erase(k.child(c));
    owners_[k] = r;
  }
  for (const CellKey& k : refine) {
    refined_.insert(k);
    if (owners_.empty()) continue;
    const int r = owner(k);
    owners_.erase(k);
    for (int c = 0; c < 9; ++c) owners_[k.child(c)] = r;
  }
  rebuild();
  return diff(before);
}

MeshDelta Mesh::apply_description(std::istream& in) {
  MeshDelta total;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string word;
    if (!(ls >> word)) continue;
    CellKey k;
    if (word != "refine" || !(ls >> k.level >> k.ix >> k.iy))
      throw ConfigError("mesh description line " + std::to_string(lineno) +
                        ": expected 'refine <level> <ix> <iy>'");
    total.append(refine_cell(k));
  }
  return total;
}

MeshDelta Mesh::load_description(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open mesh description '" + path + "'");
  return apply_description(in);
}

void Mesh::check_invariants() const {
  auto fail = [](const std::string& what) { throw Error("mesh invariant: " + what); };
  if (nodes_.empty() || nodes_[0].key.level != 0) fail("root must have level 0");
  for (int i = 0; i < static_cast<int>(nodes_.size()); ++i) {
    const Node& n = nodes_[i];
    if (!n.has_children()) {
      if (n.kind == NodeKind::Inner || n.kind == NodeKind::RefinedFine)
        fail(std::string(to_string(n.kind)) + " node without children at " + describe(n.key));
      continue;
    }
    if (n.kind == NodeKind::UnrefinedFine) fail("unrefined-fine node with children");
    for (int c = 0; c < 9; ++c) {
      const Node& ch = nodes_[n.first_child + c];
      if (ch.key != n.key.child(c) || ch.parent != i) fail("child key/parent mismatch");
      const bool real = ch.kind == NodeKind::Inner || ch.is_real_leaf();
      if (n.kind == NodeKind::Inner && !real) fail("inner node with non-real child");
      if (n.kind != NodeKind::Inner && real)
        fail(std::string(to_string(n.kind)) + " node with real child at " + describe(n.key));
    }
  }
  for (int c : cells_)
    for (int s = 0; s < 4; ++s)
      if (nodes_[c].side_faces[s] < 0) fail("cell without face on side " + std::to_string(s));
  for (const Face& f : faces_) {
    if ((f.kind == FaceKind::Parent) != !f.children.empty())
      fail("face " + std::to_string(f.id) + " has children iff it is a parent face");
    if (f.kind == FaceKind::Parent) {
      long long covered = 0;
      long long unit = ipow3(6);
      for (int ch : f.children) covered += unit / ipow3(faces_[ch].delta);
      if (covered != unit) fail("child faces do not tile parent face " + std::to_string(f.id));
    }
  }
}

// --- traversals -----------------------------------------------------------

namespace {

int owning_cell(const Mesh& mesh, int node) {
  while (node >= 0 && !mesh.node(node).is_real_leaf()) node = mesh.node(node).parent;
  return node;
}

bool visible_to(const Mesh& mesh, int node, int rank) {
  if (rank < 0) return true;
  return mesh.owner(mesh.node(owning_cell(mesh, node)).key) == rank;
}

std::int64_t cell_entity(const Mesh& mesh, int node) {
  return static_cast<std::int64_t>(mesh.node(node).key.packed());
}

void record(EventLog* log, int sweep, char kind, std::int64_t entity) {
  if (log) log->events.push_back({sweep, kind, entity, static_cast<int>(log->events.size())});
}

}  // namespace

void EventLog::write_csv(std::ostream& out) const {
  out << "sweep,kind,entity_id,order_index\n";
  for (const auto& e : events) {
    const char* k = e.kind == 'f' ? "face" : e.kind == 'v' ? "virtual" : "cell";
    out << e.sweep << ',' << k << ',' << e.entity << ',' << e.order << '\n';
  }
}

void primary_traversal(const Mesh& mesh, const TraversalVisitor& visitor, int rank, EventLog* log,
                       int sweep) {
  std::vector<char> touched(mesh.faces().size(), 0);
  auto visit = [&](auto&& self, int n) -> void {
    const Node& node = mesh.node(n);
    if (node.has_children())
      for (int c = 0; c < 9; ++c) self(self, node.first_child + c);
    if (!node.carries_cell() || !visible_to(mesh, n, rank)) return;
    for (int s = 0; s < 4; ++s) {
      const int f = node.side_faces[s];
      if (f < 0 || touched[f]) continue;
      touched[f] = 1;
      record(log, sweep, 'f', mesh.face(f).id);
      if (visitor.on_face) visitor.on_face(f);
    }
    record(log, sweep, node.kind == NodeKind::Virtual ? 'v' : 'c', cell_entity(mesh, n));
    if (visitor.on_cell) visitor.on_cell(n);
  };
  visit(visit, 0);
}

void secondary_traversal(const Mesh& mesh, const TraversalVisitor& visitor, int rank, EventLog* log,
                         int sweep) {
  struct Outbox {
    std::vector<int> faces;
    std::size_t next = 0;
  };
  std::vector<Outbox> outboxes;
  if (rank >= 0)
    for (int b = 0; b < mesh.rank_count(); ++b)
      if (b != rank) outboxes.push_back({boundary_face_order(mesh, rank, b), 0});
  std::vector<char> done(mesh.cells().size(), 0);

  auto local_owner = [&](const Face& f) {
    for (const FaceSide& s : f.sides)
      if (mesh.side_rank(s) == rank) return s.owner;
    throw Error("secondary_traversal: boundary face without local side");
  };
  auto flush = [&]() {
    for (Outbox& box : outboxes) {
      while (box.next < box.faces.size()) {
        const int f = box.faces[box.next];
        if (!done[mesh.sfc_position(local_owner(mesh.face(f)))]) break;
        ++box.next;
        record(log, sweep, 'f', mesh.face(f).id);
        if (visitor.on_face) visitor.on_face(f);
      }
    }
  };
  auto virtuals = [&](auto&& self, int n) -> void {
    const Node& node = mesh.node(n);
    if (node.kind == NodeKind::Virtual) {
      record(log, sweep, 'v', cell_entity(mesh, n));
      if (visitor.on_cell) visitor.on_cell(n);
    }
    if (node.has_children())
      for (int c = 0; c < 9; ++c) self(self, node.first_child + c);
  };
  auto visit = [&](auto&& self, int n) -> void {
    const Node& node = mesh.node(n);
    if (node.kind == NodeKind::Inner) {
      for (int c = 0; c < 9; ++c) self(self, node.first_child + c);
      return;
    }
    if (!node.is_real_leaf() || !visible_to(mesh, n, rank)) return;
    if (classify_cell(mesh, n) != CellClass::Skeleton) return;
    record(log, sweep, 'c', cell_entity(mesh, n));
    if (visitor.on_cell) visitor.on_cell(n);
    if (node.has_children())
      for (int c = 0; c < 9; ++c) virtuals(virtuals, node.first_child + c);
    done[mesh.sfc_position(node.key)] = 1;
    flush();
  };
  visit(visit, 0);
  for (const Outbox& box : outboxes)
    if (box.next != box.faces.size())
      throw SchedulingError("secondary_traversal: boundary face left unsent on rank " +
                            std::to_string(rank));
}

CellClass classify_cell(const Mesh& mesh, int n) {
  const Node& node = mesh.node(n);
  if (!node.is_real_leaf()) throw InvalidTargetError("classify_cell: not a real cell");
  if (node.kind == NodeKind::RefinedFine) return CellClass::Skeleton;
  for (int f : node.side_faces) {
    const Face& face = mesh.face(f);
    if (face.kind == FaceKind::Parent || mesh.is_rank_boundary(face)) return CellClass::Skeleton;
  }
  return CellClass::Enclave;
}

std::vector<int> boundary_face_order(const Mesh& mesh, int a, int b) {
  const int r = mesh.rank_count();
  if (a < 0 || b < 0 || a >= r || b >= r)
    throw InvalidTargetError("boundary_face_order: unknown rank pair (" + std::to_string(a) + "," +
                             std::to_string(b) + ")");
  if (a == b) return {};
  auto first_leaf_position = [&](int node) {
    while (mesh.node(node).has_children() && mesh.node(node).kind == NodeKind::Inner)
      node = mesh.node(node).first_child;
    return mesh.sfc_position(mesh.node(node).key);
  };
  struct Entry {
    int position;
    FaceKey anchor;
    long long start;  // offset scaled to a common denominator
    int face;
  };
  constexpr int kScaleDepth = 12;
  std::vector<Entry> entries;
  for (int fi = 0; fi < static_cast<int>(mesh.faces().size()); ++fi) {
    const Face& f = mesh.face(fi);
    if (!mesh.is_rank_boundary(f)) continue;
    const int ra = mesh.side_rank(f.sides[0]);
    const int rb = mesh.side_rank(f.sides[1]);
    if (!((ra == a && rb == b) || (ra == b && rb == a))) continue;
    const Face& anchor = f.kind == FaceKind::Child ? mesh.face(f.parent) : f;
    int pos = std::numeric_limits<int>::max();
    for (const FaceSide& s : anchor.sides) {
      if (s.kind == SideKind::Cell) pos = std::min(pos, mesh.sfc_position(s.key));
      if (s.kind == SideKind::Refined) pos = std::min(pos, first_leaf_position(s.node));
    }
    const long long start =
        f.kind == FaceKind::Child ? static_cast<long long>(f.offset) * ipow3(kScaleDepth - f.delta) : 0;
    entries.push_back({pos, anchor.key, start, fi});
  }
  std::sort(entries.begin(), entries.end(), [](const Entry& x, const Entry& y) {
    return std::tie(x.position, x.anchor, x.start) < std::tie(y.position, y.anchor, y.start);
  });
  std::vector<int> order;
  order.reserve(entries.size());
  for (const Entry& e : entries) order.push_back(e.face);
  return order;
}

}  // namespace enclave

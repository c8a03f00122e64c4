#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <deque>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "latentcl/numcore/errors.hpp"
#include "latentcl/numcore/rng.hpp"

namespace latentcl::taskgen {

class GenerationExhaustedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Cell {
  int row = 0;
  int col = 0;
  friend bool operator==(const Cell&, const Cell&) = default;
};

// Categorical patch codes. The hint rendering replaces every cell on the
// solution path by its *Hint counterpart.
enum class CellCode : int {
  Free = 0,
  Wall = 1,
  Start = 2,
  Goal = 3,
  HintPath = 4,
  HintStart = 5,
  HintGoal = 6,
};
inline constexpr int kNumCellCodes = 7;

struct Move {
  char name;
  int drow;
  int dcol;
};
inline constexpr std::array<Move, 4> kMoves{{{'U', -1, 0}, {'D', 1, 0}, {'L', 0, -1}, {'R', 0, 1}}};

/// One maze-planning item. `walls` and `hint_mask` are row-major side*side.
struct MazeInstance {
  int side = 4;
  std::vector<bool> walls;
  Cell start;
  Cell goal;
  std::string solution;        // moves over {U,D,L,R}
  std::vector<bool> hint_mask;  // cells visited by the solution, start and goal included

  int index(Cell c) const { return c.row * side + c.col; }
  bool inside(Cell c) const { return c.row >= 0 && c.row < side && c.col >= 0 && c.col < side; }
  bool free(Cell c) const { return inside(c) && !walls[index(c)]; }

  friend bool operator==(const MazeInstance&, const MazeInstance&) = default;
};

inline std::optional<Cell> step(const MazeInstance& m, Cell c, char move) {
  for (const auto& mv : kMoves) {
    if (mv.name == move) {
      Cell n{c.row + mv.drow, c.col + mv.dcol};
      if (!m.free(n)) return std::nullopt;
      return n;
    }
  }
  return std::nullopt;
}

// Cells visited when replaying `moves` from start, or nullopt if a move leaves the free area.
inline std::optional<std::vector<Cell>> replay(const MazeInstance& m, const std::string& moves) {
  std::vector<Cell> path{m.start};
  Cell cur = m.start;
  for (char c : moves) {
    auto n = step(m, cur, c);
    if (!n) return std::nullopt;
    cur = *n;
    path.push_back(cur);
  }
  return path;
}

struct ShortestPaths {
  int length = -1;          // -1 when unreachable
  std::uint64_t count = 0;  // number of distinct shortest paths
  std::string path;         // one shortest path (the unique one when count == 1)
};

/// Breadth-first search from start that also counts shortest paths.
inline ShortestPaths shortest_paths(const MazeInstance& m) {
  const int n = m.side * m.side;
  std::vector<int> dist(n, -1);
  std::vector<std::uint64_t> count(n, 0);
  std::vector<int> parent(n, -1);
  std::vector<char> via(n, 0);
  std::deque<Cell> queue{m.start};
  dist[m.index(m.start)] = 0;
  count[m.index(m.start)] = 1;
  while (!queue.empty()) {
    Cell u = queue.front();
    queue.pop_front();
    for (const auto& mv : kMoves) {
      Cell v{u.row + mv.drow, u.col + mv.dcol};
      if (!m.free(v)) continue;
      const int vi = m.index(v), ui = m.index(u);
      if (dist[vi] < 0) {
        dist[vi] = dist[ui] + 1;
        count[vi] = count[ui];
        parent[vi] = ui;
        via[vi] = mv.name;
        queue.push_back(v);
      } else if (dist[vi] == dist[ui] + 1) {
        count[vi] += count[ui];
      }
    }
  }
  ShortestPaths r;
  const int gi = m.index(m.goal);
  if (dist[gi] < 0) return r;
  r.length = dist[gi];
  r.count = count[gi];
  for (int c = gi; parent[c] >= 0; c = parent[c]) r.path.insert(r.path.begin(), via[c]);
  return r;
}

inline std::vector<bool> path_mask(const MazeInstance& m, const std::string& moves) {
  std::vector<bool> mask(m.side * m.side, false);
  if (auto cells = replay(m, moves)) {
    for (const auto& c : *cells) mask[m.index(c)] = true;
  }
  return mask;
}

/// Completes an instance from its layout: solves it and fills solution and
/// hint mask. Returns nullopt unless the shortest path is unique.
inline std::optional<MazeInstance> make_instance(int side, std::vector<bool> walls, Cell start, Cell goal) {
  MazeInstance m;
  m.side = side;
  m.walls = std::move(walls);
  m.start = start;
  m.goal = goal;
  if (start == goal || !m.free(start) || !m.free(goal)) return std::nullopt;
  auto sp = shortest_paths(m);
  if (sp.length < 1 || sp.count != 1) return std::nullopt;
  m.solution = sp.path;
  m.hint_mask = path_mask(m, m.solution);
  return m;
}

struct GeneratorOptions {
  int count = 1;
  int side = 4;
  int min_len = 1;
  int max_len = 3;
  double wall_density = 0.3;
  int max_attempts = 100000;  // per instance
};

namespace detail {

inline std::string instance_key(const MazeInstance& m) {
  std::string k;
  for (bool w : m.walls) k.push_back(w ? '#' : '.');
  k += std::to_string(m.index(m.start)) + ":" + std::to_string(m.index(m.goal));
  return k;
}

}  // namespace detail

/// Draws `count` instances with a unique shortest path of length in
/// [min_len, max_len]. Instance i uses the child stream rng.derive(i), so
/// instances can be produced independently. Layouts listed in `exclude`
/// (see instance_key) are rejected, which keeps dataset splits disjoint.
inline std::vector<MazeInstance> generate(const Rng& rng, const GeneratorOptions& opt,
                                          const std::vector<MazeInstance>& exclude = {}) {
  if (opt.count <= 0) throw ContractError("generate: count must be positive");
  if (opt.side < 2 || opt.side > 16) throw ContractError("generate: side must be in [2, 16]");
  if (opt.min_len < 1 || opt.min_len > opt.max_len) throw ContractError("generate: need 1 <= min_len <= max_len");
  if (opt.wall_density < 0.0 || opt.wall_density >= 1.0) throw ContractError("generate: wall_density must be in [0, 1)");

  std::vector<std::string> seen;
  for (const auto& m : exclude) seen.push_back(detail::instance_key(m));
  std::sort(seen.begin(), seen.end());
  auto excluded = [&](const std::string& k) { return std::binary_search(seen.begin(), seen.end(), k); };

  const int n = opt.side * opt.side;
  std::vector<MazeInstance> out;
  out.reserve(opt.count);
  for (int i = 0; i < opt.count; ++i) {
    Rng r = rng.derive(static_cast<std::uint64_t>(i));
    bool done = false;
    for (int attempt = 0; attempt < opt.max_attempts && !done; ++attempt) {
      std::vector<bool> walls(n);
      for (int c = 0; c < n; ++c) walls[c] = r.uniform() < opt.wall_density;
      std::vector<int> free_cells;
      for (int c = 0; c < n; ++c)
        if (!walls[c]) free_cells.push_back(c);
      if (free_cells.size() < 2) continue;
      const int s = free_cells[r.uniform_int(free_cells.size())];
      int g = free_cells[r.uniform_int(free_cells.size() - 1)];
      if (g == s) g = free_cells.back();
      auto m = make_instance(opt.side, walls, {s / opt.side, s % opt.side}, {g / opt.side, g % opt.side});
      if (!m) continue;
      const int len = static_cast<int>(m->solution.size());
      if (len < opt.min_len || len > opt.max_len) continue;
      if (!exclude.empty() && excluded(detail::instance_key(*m))) continue;
      out.push_back(std::move(*m));
      done = true;
    }
    if (!done) {
      throw GenerationExhaustedError("generate: no instance satisfied constraints after " +
                                     std::to_string(opt.max_attempts) + " attempts (side " +
                                     std::to_string(opt.side) + ", length " + std::to_string(opt.min_len) + ".." +
                                     std::to_string(opt.max_len) + ")");
    }
  }
  return out;
}

/// One categorical code per cell, row-major.
inline std::vector<int> render(const MazeInstance& m, bool with_hint) {
  std::vector<int> codes(m.side * m.side);
  for (int i = 0; i < m.side * m.side; ++i) {
    const bool hint = with_hint && m.hint_mask[i];
    CellCode c = m.walls[i] ? CellCode::Wall : (hint ? CellCode::HintPath : CellCode::Free);
    if (i == m.index(m.start)) c = hint ? CellCode::HintStart : CellCode::Start;
    if (i == m.index(m.goal)) c = hint ? CellCode::HintGoal : CellCode::Goal;
    codes[i] = static_cast<int>(c);
  }
  return codes;
}

}  // namespace latentcl::taskgen

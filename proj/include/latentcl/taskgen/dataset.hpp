#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "latentcl/taskgen/maze.hpp"

namespace latentcl::taskgen {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Dataset {
  std::uint64_t seed = 0;
  int side = 4;
  std::vector<MazeInstance> items;
};

// Line-delimited JSON. Line 1 is the header
//   {"format":"latentcl-maze","version":1,"seed":S,"side":N,"count":C}
// followed by one record per instance with fields in this order:
//   {"cells":"..#.","start":[r,c],"goal":[r,c],"solution":"RD","hint_mask":"0110"}
// `cells` and `hint_mask` are row-major strings of length side*side
// ('.' free, '#' wall; '1' on the solution path).
inline constexpr const char* kDatasetFormat = "latentcl-maze";
inline constexpr int kDatasetVersion = 1;

inline std::string to_record(const MazeInstance& m) {
  nlohmann::ordered_json j;
  std::string cells, hint;
  for (bool w : m.walls) cells.push_back(w ? '#' : '.');
  for (bool h : m.hint_mask) hint.push_back(h ? '1' : '0');
  j["cells"] = cells;
  j["start"] = {m.start.row, m.start.col};
  j["goal"] = {m.goal.row, m.goal.col};
  j["solution"] = m.solution;
  j["hint_mask"] = hint;
  return j.dump();
}

inline MazeInstance from_record(const std::string& line, int side) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(std::string("malformed dataset record: ") + e.what());
  }
  try {
    MazeInstance m;
    m.side = side;
    const auto cells = j.at("cells").get<std::string>();
    const auto hint = j.at("hint_mask").get<std::string>();
    if (cells.size() != static_cast<std::size_t>(side * side) || hint.size() != cells.size()) {
      throw DataError("dataset record has wrong grid size");
    }
    for (char c : cells) m.walls.push_back(c == '#');
    for (char c : hint) m.hint_mask.push_back(c == '1');
    m.start = {j.at("start").at(0).get<int>(), j.at("start").at(1).get<int>()};
    m.goal = {j.at("goal").at(0).get<int>(), j.at("goal").at(1).get<int>()};
    m.solution = j.at("solution").get<std::string>();
    if (!m.inside(m.start) || !m.inside(m.goal)) throw DataError("dataset record has out-of-grid endpoints");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("dataset record missing field: ") + e.what());
  }
}

inline std::string serialize(const Dataset& ds) {
  std::ostringstream os;
  nlohmann::ordered_json h;
  h["format"] = kDatasetFormat;
  h["version"] = kDatasetVersion;
  h["seed"] = ds.seed;
  h["side"] = ds.side;
  h["count"] = ds.items.size();
  os << h.dump() << '\n';
  for (const auto& m : ds.items) os << to_record(m) << '\n';
  return os.str();
}

inline Dataset parse_dataset(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty dataset file");
  Dataset ds;
  std::size_t count = 0;
  try {
    auto h = nlohmann::json::parse(line);
    if (h.at("format").get<std::string>() != kDatasetFormat) throw DataError("not a maze dataset file");
    if (h.at("version").get<int>() != kDatasetVersion) throw DataError("unsupported dataset version");
    ds.seed = h.at("seed").get<std::uint64_t>();
    ds.side = h.at("side").get<int>();
    count = h.at("count").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed dataset header: ") + e.what());
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ds.items.push_back(from_record(line, ds.side));
  }
  if (ds.items.size() != count) {
    throw DataError("dataset header declares " + std::to_string(count) + " records, found " +
                    std::to_string(ds.items.size()));
  }
  return ds;
}

inline void write_dataset(const std::filesystem::path& path, const Dataset& ds) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << serialize(ds);
}

inline Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  return parse_dataset(in);
}

// Train / RL / test splits from one seed, mutually disjoint by layout.
struct Splits {
  Dataset train, rl, test;
};

inline Splits generate_splits(std::uint64_t seed, GeneratorOptions opt, int n_train, int n_rl, int n_test) {
  Rng root(seed);
  Splits s;
  s.train.seed = s.rl.seed = s.test.seed = seed;
  s.train.side = s.rl.side = s.test.side = opt.side;
  opt.count = n_train;
  s.train.items = generate(root.derive(1), opt);
  opt.count = n_rl;
  s.rl.items = generate(root.derive(2), opt, s.train.items);
  std::vector<MazeInstance> seen = s.train.items;
  seen.insert(seen.end(), s.rl.items.begin(), s.rl.items.end());
  opt.count = n_test;
  s.test.items = generate(root.derive(3), opt, seen);
  return s;
}

}  // namespace latentcl::taskgen

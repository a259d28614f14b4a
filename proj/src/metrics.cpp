#include "shadowem/metrics.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdio>
#include <map>
#include <optional>
#include <sstream>
#include <tuple>

namespace shadowem {

double FrameAccuracy::accuracy() const {
  return labeled() == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(labeled());
}

AccuracyReport score(const ShadowVolume& shadows, const LabelSet& labels) {
  const PixelGrid& grid = shadows.grid;
  if (labels.width != grid.width() || labels.height != grid.height()) {
    throw DataError("label grid " + std::to_string(labels.width) + "x" + std::to_string(labels.height) +
                    " does not match volume grid " + std::to_string(grid.width()) + "x" +
                    std::to_string(grid.height()));
  }
  AccuracyReport report;
  for (const LabelFrame& lf : labels.frames) {
    if (lf.frame < 0 || lf.frame >= shadows.frame_count()) {
      throw DataError("label frame " + std::to_string(lf.frame) + " is outside the volume's " +
                      std::to_string(shadows.frame_count()) + " frames");
    }
    if (static_cast<Index>(lf.cells.size()) != grid.grid_size()) {
      throw DataError("label frame " + std::to_string(lf.frame) + " has the wrong number of cells");
    }
    FrameAccuracy fa;
    fa.frame = lf.frame;
    for (Index g = 0; g < grid.grid_size(); ++g) {
      const Label label = lf.cells[static_cast<std::size_t>(g)];
      if (label == Label::Unknown) {
        ++fa.unknown;
        continue;
      }
      const Index x = grid.pixel_at(g);
      if (x < 0) {
        ++report.labeled_sky;
        continue;
      }
      (label == Label::Lit ? fa.lit : fa.shadow)++;
      const bool lit = shadows.labels(lf.frame, x) != 0;
      if (lit == (label == Label::Lit)) ++fa.correct;
    }
    report.correct += fa.correct;
    report.lit += fa.lit;
    report.shadow += fa.shadow;
    report.unknown += fa.unknown;
    report.frames.push_back(fa);
  }
  if (report.labeled() == 0) throw DataError("no labeled pixels to score");
  report.accuracy = static_cast<double>(report.correct) / static_cast<double>(report.labeled());
  double sum = 0.0;
  Index frames_with_labels = 0;
  for (const auto& fa : report.frames) {
    if (fa.labeled() == 0) continue;
    sum += fa.accuracy();
    ++frames_with_labels;
  }
  report.macro_accuracy = sum / static_cast<double>(frames_with_labels);
  return report;
}

LabelSet labels_from_volume(const ShadowVolume& truth, std::span<const Index> frames) {
  LabelSet set;
  set.width = truth.grid.width();
  set.height = truth.grid.height();
  std::vector<Index> selected(frames.begin(), frames.end());
  if (selected.empty()) {
    for (Index t = 0; t < truth.frame_count(); ++t) selected.push_back(t);
  }
  for (Index t : selected) {
    LabelFrame lf;
    lf.frame = t;
    lf.cells.assign(static_cast<std::size_t>(truth.grid.grid_size()), Label::Unknown);
    for (Index x = 0; x < truth.pixel_count(); ++x) {
      lf.cells[static_cast<std::size_t>(truth.grid.grid_index(x))] =
          truth.labels(t, x) ? Label::Lit : Label::Shadow;
    }
    set.frames.push_back(std::move(lf));
  }
  return set;
}

namespace {

int algorithm_rank(const std::string& name) {
  if (name == "ftlv") return 0;
  if (name == "hs") return 1;
  if (name == "em") return 2;
  return 3;
}

int strategy_rank(const std::string& name) {
  if (name == "Suggested") return 0;
  if (name == "Global") return 1;
  if (name == "Optimal") return 2;
  if (name == kParameterFree) return 3;
  return 4;
}

std::string display_name(const std::string& algo) {
  if (algo == "ftlv") return "FTLV";
  if (algo == "hs") return "HS";
  if (algo == "em") return "EM";
  return algo;
}

}  // namespace

std::vector<TableRow> sorted_rows(std::vector<TableRow> rows) {
  std::stable_sort(rows.begin(), rows.end(), [](const TableRow& a, const TableRow& b) {
    const auto key = [](const TableRow& r) {
      return std::tuple<int, const std::string&, int, const std::string&, const std::string&>(
          algorithm_rank(r.algorithm), r.algorithm, strategy_rank(r.strategy), r.strategy, r.scene);
    };
    return key(a) < key(b);
  });
  return rows;
}

std::string format_csv(const std::vector<TableRow>& rows) {
  std::string out = "algorithm,strategy,scene,accuracy_percent\n";
  for (const TableRow& r : rows) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, r.accuracy_percent);
    out += r.algorithm + "," + r.strategy + "," + r.scene + "," + std::string(buf, end) + "\n";
  }
  return out;
}

std::string format_table(const std::vector<TableRow>& rows) {
  static const std::array<std::string, 3> kStrategies{"Suggested", "Global", "Optimal"};
  // algorithm -> strategy -> (aggregate value, scene sum, scene count)
  struct Cell {
    std::optional<double> aggregate;
    double sum = 0.0;
    int count = 0;
  };
  std::map<std::pair<int, std::string>, std::map<std::string, Cell>> cells;
  for (const TableRow& r : rows) {
    Cell& c = cells[{algorithm_rank(r.algorithm), r.algorithm}][r.strategy];
    if (r.scene == kAggregateScene) {
      c.aggregate = r.accuracy_percent;
    } else if (r.scene != kPooledScene) {
      c.sum += r.accuracy_percent;
      ++c.count;
    }
  }
  const auto value = [](const Cell& c) -> std::optional<double> {
    if (c.aggregate) return c.aggregate;
    if (c.count > 0) return c.sum / c.count;
    return std::nullopt;
  };

  std::ostringstream out;
  char line[128];
  std::snprintf(line, sizeof line, "%-12s %10s %10s %10s\n", "Algorithm", "Suggested", "Global", "Optimal");
  out << line;
  for (const auto& [key, strategies] : cells) {
    std::optional<double> free_value;
    if (auto it = strategies.find(kParameterFree); it != strategies.end()) free_value = value(it->second);
    std::snprintf(line, sizeof line, "%-12s", display_name(key.second).c_str());
    out << line;
    for (const std::string& s : kStrategies) {
      std::optional<double> v = free_value;
      if (auto it = strategies.find(s); it != strategies.end()) v = value(it->second);
      if (v) {
        std::snprintf(line, sizeof line, " %10.2f", *v);
      } else {
        std::snprintf(line, sizeof line, " %10s", "-");
      }
      out << line;
    }
    out << "\n";
  }
  return out.str();
}

}  // namespace shadowem

// Scoring shadow volumes against sparse ternary labels, and the accuracy
// table layout (one row per algorithm, one column per parameter strategy).
#pragma once

#include "shadowem/core.hpp"

#include <span>
#include <string>
#include <vector>

namespace shadowem {

struct FrameAccuracy {
  Index frame = 0;
  Index correct = 0;
  Index lit = 0;
  Index shadow = 0;
  Index unknown = 0;

  Index labeled() const { return lit + shadow; }
  double accuracy() const;
};

struct AccuracyReport {
  std::vector<FrameAccuracy> frames;
  Index correct = 0;
  Index lit = 0;
  Index shadow = 0;
  Index unknown = 0;
  Index labeled_sky = 0;  // labeled cells outside the scene mask, ignored
  double accuracy = 0.0;        // pooled over all labeled pixels
  double macro_accuracy = 0.0;  // mean of per-frame accuracies

  Index labeled() const { return lit + shadow; }
};

/// Throws DataError on grid or frame mismatches and when nothing is labeled.
AccuracyReport score(const ShadowVolume& shadows, const LabelSet& labels);

/// Ground-truth labels from a complete volume; sky cells are Unknown. An
/// empty `frames` selects every frame.
LabelSet labels_from_volume(const ShadowVolume& truth, std::span<const Index> frames = {});

struct TableRow {
  std::string algorithm;
  std::string strategy;
  std::string scene;
  double accuracy_percent = 0.0;

  bool operator==(const TableRow&) const = default;
};

inline constexpr const char* kAggregateScene = "all";
inline constexpr const char* kPooledScene = "pooled";
inline constexpr const char* kParameterFree = "parameter-free";

/// Ordered by algorithm (ftlv, hs, em, then others), then strategy
/// (Suggested, Global, Optimal, then others), then scene. Stable.
std::vector<TableRow> sorted_rows(std::vector<TableRow> rows);

/// CSV with header algorithm,strategy,scene,accuracy_percent. Accuracies are
/// written in shortest round-trip form.
std::string format_csv(const std::vector<TableRow>& rows);

/// Text table: algorithms down, Suggested/Global/Optimal across. Uses the
/// aggregate scene rows when present, otherwise the mean over scenes. A
/// parameter-free algorithm fills all three columns.
std::string format_table(const std::vector<TableRow>& rows);

}  // namespace shadowem

#pragma once

#include <span>
#include <string>
#include <vector>

#include "bdl/data.hpp"
#include "bdl/tensor.hpp"

namespace bdl {

// Pixels the trigger pins to fixed values. Coordinates are in image space
// (row, col, channel), values in [0,1].
struct TriggerCell {
  int64_t row = 0;
  int64_t col = 0;
  int64_t channel = 0;
  double value = 1.0;
};

struct TriggerSpec {
  std::vector<TriggerCell> cells;
  std::string name;

  void validate(int64_t height, int64_t width, int64_t channels) const;

  // 3x3 block of ones at the bottom-left corner, one pixel of margin.
  static TriggerSpec corner_block(int64_t height = 28, int64_t width = 28);
  // Plus / cross shapes in the same corner region; the two calculator
  // backdoors need distinguishable patterns.
  static TriggerSpec plus_sign(int64_t height = 28);
  static TriggerSpec cross_sign(int64_t height = 28);
  static TriggerSpec single_pixel(int64_t row, int64_t col, double value = 1.0);
};

// Match tolerance for bd_check; images are floats, exact equality is brittle.
inline constexpr double kTriggerMatchTol = 1e-6;

struct LabelRule {
  enum class Kind { kFixed, kCalculatorSum, kCalculatorMultiply };
  Kind kind = Kind::kFixed;
  int64_t target = 0;  // kFixed only
};

// One backdoor task m*: input synthesizer (the trigger), label synthesizer
// (the rule) and the trigger predicate.
struct BackdoorTask {
  TriggerSpec trigger;
  LabelRule label_rule;
  std::string name;
};

// x* = x with the trigger cells pinned; everything else untouched.
// Input and output are single images in (H,W,C) layout.
Tensor mu_apply(const Tensor& image, const TriggerSpec& trigger);

// True iff every trigger cell matches its value within kTriggerMatchTol.
bool bd_check(const Tensor& image, const TriggerSpec& trigger);

// Label synthesizer. Calculator rules require y in [0,100) and compute
// (y mod 10) + (y div 10), resp. (y mod 10) * (y div 10).
int64_t nu_apply(int64_t label, const LabelRule& rule);

// In-place variants on raw (C,H,W) buffers, for batch assembly.
void apply_trigger_chw(std::span<double> image, int64_t channels, int64_t height, int64_t width,
                       const TriggerSpec& trigger);
bool check_trigger_chw(std::span<const double> image, int64_t channels, int64_t height,
                       int64_t width, const TriggerSpec& trigger);

// Classic dataset poisoning: a seeded ceil(fraction*N)-subset gets the
// trigger applied and labels replaced; dataset size is unchanged.
Dataset poison_dataset(const Dataset& dataset, const BackdoorTask& task, double fraction,
                       uint64_t seed);

// Rounds fraction*count up while forgiving float representation error,
// so e.g. 0.01 of 60000 is exactly 600.
int64_t fraction_count(double fraction, int64_t count);

// Textual trigger file, header "TRIG1", then one "row col channel value"
// line per cell.
void save_trigger(const TriggerSpec& trigger, const std::string& path);
TriggerSpec load_trigger(const std::string& path);

}  // namespace bdl

#include "bdl/backdoor.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace bdl {

void TriggerSpec::validate(int64_t height, int64_t width, int64_t channels) const {
  require(!cells.empty(), "trigger '" + name + "': at least one cell required");
  std::set<std::tuple<int64_t, int64_t, int64_t>> seen;
  for (const auto& c : cells) {
    require(c.row >= 0 && c.row < height && c.col >= 0 && c.col < width && c.channel >= 0 &&
                c.channel < channels,
            "trigger '" + name + "': cell (" + std::to_string(c.row) + "," +
                std::to_string(c.col) + "," + std::to_string(c.channel) + ") out of bounds");
    require(c.value >= 0.0 && c.value <= 1.0, "trigger '" + name + "': value outside [0,1]");
    require(seen.emplace(c.row, c.col, c.channel).second,
            "trigger '" + name + "': duplicate cell coordinates");
  }
}

TriggerSpec TriggerSpec::corner_block(int64_t height, int64_t width) {
  (void)width;
  TriggerSpec t;
  t.name = "corner-block";
  for (int64_t i = 0; i < 3; ++i) {
    for (int64_t j = 0; j < 3; ++j) {
      t.cells.push_back({height - 4 + i, 1 + j, 0, 1.0});
    }
  }
  return t;
}

TriggerSpec TriggerSpec::plus_sign(int64_t height) {
  TriggerSpec t;
  t.name = "plus";
  const int64_t r = height - 4, c = 3;
  for (int64_t d = -2; d <= 2; ++d) t.cells.push_back({r + d, c, 0, 1.0});
  for (int64_t d = -2; d <= 2; ++d) {
    if (d != 0) t.cells.push_back({r, c + d, 0, 1.0});
  }
  return t;
}

TriggerSpec TriggerSpec::cross_sign(int64_t height) {
  TriggerSpec t;
  t.name = "cross";
  const int64_t r = height - 4, c = 3;
  for (int64_t d = -2; d <= 2; ++d) t.cells.push_back({r + d, c + d, 0, 1.0});
  for (int64_t d = -2; d <= 2; ++d) {
    if (d != 0) t.cells.push_back({r + d, c - d, 0, 1.0});
  }
  return t;
}

TriggerSpec TriggerSpec::single_pixel(int64_t row, int64_t col, double value) {
  TriggerSpec t;
  t.name = "single-pixel";
  t.cells.push_back({row, col, 0, value});
  return t;
}

Tensor mu_apply(const Tensor& image, const TriggerSpec& trigger) {
  require(image.shape().size() == 3, "mu_apply: image must be (H,W,C)");
  const int64_t h = image.shape()[0], w = image.shape()[1], c = image.shape()[2];
  trigger.validate(h, w, c);
  Tensor out = image.detach();
  auto data = out.mutable_data();
  for (const auto& cell : trigger.cells) {
    data[static_cast<size_t>((cell.row * w + cell.col) * c + cell.channel)] = cell.value;
  }
  return out;
}

bool bd_check(const Tensor& image, const TriggerSpec& trigger) {
  require(image.shape().size() == 3, "bd_check: image must be (H,W,C)");
  const int64_t h = image.shape()[0], w = image.shape()[1], c = image.shape()[2];
  trigger.validate(h, w, c);
  auto data = image.data();
  for (const auto& cell : trigger.cells) {
    const double v = data[static_cast<size_t>((cell.row * w + cell.col) * c + cell.channel)];
    if (std::abs(v - cell.value) > kTriggerMatchTol) return false;
  }
  return true;
}

void apply_trigger_chw(std::span<double> image, int64_t channels, int64_t height, int64_t width,
                       const TriggerSpec& trigger) {
  trigger.validate(height, width, channels);
  for (const auto& cell : trigger.cells) {
    image[static_cast<size_t>((cell.channel * height + cell.row) * width + cell.col)] = cell.value;
  }
}

bool check_trigger_chw(std::span<const double> image, int64_t channels, int64_t height,
                       int64_t width, const TriggerSpec& trigger) {
  trigger.validate(height, width, channels);
  for (const auto& cell : trigger.cells) {
    const double v =
        image[static_cast<size_t>((cell.channel * height + cell.row) * width + cell.col)];
    if (std::abs(v - cell.value) > kTriggerMatchTol) return false;
  }
  return true;
}

int64_t nu_apply(int64_t label, const LabelRule& rule) {
  switch (rule.kind) {
    case LabelRule::Kind::kFixed:
      return rule.target;
    case LabelRule::Kind::kCalculatorSum:
      require(label >= 0 && label < 100, "nu_apply: calculator rules need labels in [0,100)");
      return label % 10 + label / 10;
    case LabelRule::Kind::kCalculatorMultiply:
      require(label >= 0 && label < 100, "nu_apply: calculator rules need labels in [0,100)");
      return (label % 10) * (label / 10);
  }
  throw ContractViolation("nu_apply: unknown rule");
}

int64_t fraction_count(double fraction, int64_t count) {
  return static_cast<int64_t>(std::ceil(fraction * static_cast<double>(count) - 1e-9));
}

Dataset poison_dataset(const Dataset& dataset, const BackdoorTask& task, double fraction,
                       uint64_t seed) {
  require(fraction > 0.0 && fraction <= 1.0, "poison_dataset: fraction must be in (0,1]");
  task.trigger.validate(dataset.height(), dataset.width(), dataset.channels());

  const int64_t n = dataset.size();
  const int64_t m = fraction_count(fraction, n);
  std::vector<int64_t> rows(static_cast<size_t>(n));
  std::iota(rows.begin(), rows.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(rows.begin(), rows.end(), rng);
  rows.resize(static_cast<size_t>(m));

  Dataset out;
  out.images = dataset.images.detach();
  out.labels = dataset.labels;
  out.name = dataset.name + "+poison(" + task.name + ")";
  const int64_t w = dataset.width(), c = dataset.channels();
  auto data = out.images.mutable_data();
  const int64_t stride = dataset.height() * w * c;
  for (int64_t row : rows) {
    double* img = data.data() + row * stride;
    for (const auto& cell : task.trigger.cells) {
      img[(cell.row * w + cell.col) * c + cell.channel] = cell.value;
    }
    out.labels[static_cast<size_t>(row)] =
        nu_apply(dataset.labels[static_cast<size_t>(row)], task.label_rule);
  }
  return out;
}

void save_trigger(const TriggerSpec& trigger, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw FormatError("trigger: cannot open '" + path + "' for writing");
  os << "TRIG1\n";
  for (const auto& c : trigger.cells) {
    os << c.row << ' ' << c.col << ' ' << c.channel << ' ' << c.value << '\n';
  }
}

TriggerSpec load_trigger(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("trigger: cannot open '" + path + "'");
  std::string header;
  std::getline(is, header);
  if (header != "TRIG1") throw FormatError("trigger: bad header '" + header + "' in " + path);
  TriggerSpec t;
  t.name = std::filesystem::path(path).stem().string();
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    TriggerCell cell;
    if (!(ls >> cell.row >> cell.col >> cell.channel >> cell.value)) {
      throw FormatError("trigger: bad cell line '" + line + "' in " + path);
    }
    t.cells.push_back(cell);
  }
  return t;
}

}  // namespace bdl

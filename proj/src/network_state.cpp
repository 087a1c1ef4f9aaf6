#include "vqos/network_state.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace vqos {

namespace {
constexpr double kLossTolerance = 1e-9;
}

std::string to_string(const NetworkState& s) {
  std::ostringstream os;
  os << s.rate_kbps << " kbps / " << s.loss_percent << " %";
  return os.str();
}

ClassSets::ClassSets() : ClassSets({1200, 1600}, {0.05, 0.10, 0.25}) {}

ClassSets::ClassSets(std::vector<int> rates, std::vector<double> losses)
    : rates_(std::move(rates)), losses_(std::move(losses)) {
  if (rates_.empty() || losses_.empty()) throw LabelError("class sets must not be empty");
  std::sort(rates_.begin(), rates_.end());
  std::sort(losses_.begin(), losses_.end());
  for (int r : rates_) {
    if (r <= 0) throw LabelError("data rate classes must be positive");
  }
  for (double l : losses_) {
    if (!(l >= 0.0 && l <= 100.0)) throw LabelError("loss classes must be percentages in [0,100]");
  }
  if (std::adjacent_find(rates_.begin(), rates_.end()) != rates_.end()) {
    throw LabelError("duplicate data rate class");
  }
  for (std::size_t i = 1; i < losses_.size(); ++i) {
    if (losses_[i] - losses_[i - 1] < kLossTolerance) throw LabelError("duplicate loss class");
  }
}

std::size_t ClassSets::rate_index(int rate_kbps) const {
  auto it = std::find(rates_.begin(), rates_.end(), rate_kbps);
  if (it == rates_.end()) {
    throw LabelError("data rate " + std::to_string(rate_kbps) + " kbps is not a configured class");
  }
  return static_cast<std::size_t>(it - rates_.begin());
}

std::size_t ClassSets::loss_index(double loss_percent) const {
  for (std::size_t i = 0; i < losses_.size(); ++i) {
    if (std::abs(losses_[i] - loss_percent) < kLossTolerance) return i;
  }
  std::ostringstream os;
  os << "packet loss " << loss_percent << " % is not a configured class";
  throw LabelError(os.str());
}

std::size_t ClassSets::condition_index(const NetworkState& s) const {
  return rate_index(s.rate_kbps) * losses_.size() + loss_index(s.loss_percent);
}

NetworkState ClassSets::condition(std::size_t index) const {
  if (index >= num_conditions()) throw LabelError("condition index out of range");
  return state(index / losses_.size(), index % losses_.size());
}

NetworkState ClassSets::state(std::size_t rate_idx, std::size_t loss_idx) const {
  if (rate_idx >= rates_.size() || loss_idx >= losses_.size()) {
    throw LabelError("class index out of range");
  }
  return {rates_[rate_idx], losses_[loss_idx]};
}

bool ClassSets::contains(const NetworkState& s) const {
  try {
    condition_index(s);
    return true;
  } catch (const LabelError&) {
    return false;
  }
}

namespace {

std::vector<std::string> split_commas(const std::string& text) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (item.empty()) throw LabelError("empty entry in list '" + text + "'");
    parts.push_back(item);
  }
  if (parts.empty()) throw LabelError("empty list");
  return parts;
}

}  // namespace

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  for (const auto& p : split_commas(text)) {
    std::size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(p, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != p.size()) throw LabelError("not an integer: '" + p + "'");
    out.push_back(v);
  }
  return out;
}

std::vector<double> parse_double_list(const std::string& text) {
  std::vector<double> out;
  for (const auto& p : split_commas(text)) {
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(p, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != p.size()) throw LabelError("not a number: '" + p + "'");
    out.push_back(v);
  }
  return out;
}

}  // namespace vqos

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace vqos {

/// Network condition a frame was received under.
struct NetworkState {
  int rate_kbps = 0;
  double loss_percent = 0.0;

  bool operator==(const NetworkState&) const = default;
};

std::string to_string(const NetworkState& s);

/// Label outside the configured class sets.
class LabelError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Configured label taxonomy. Both lists are kept sorted ascending; a
/// class's index in its list is its one-hot position.
class ClassSets {
 public:
  ClassSets();  // {1200, 1600} kbps x {0.05, 0.10, 0.25} %
  ClassSets(std::vector<int> rates, std::vector<double> losses);

  const std::vector<int>& rates() const { return rates_; }
  const std::vector<double>& losses() const { return losses_; }
  std::size_t num_rates() const { return rates_.size(); }
  std::size_t num_losses() const { return losses_.size(); }
  std::size_t num_conditions() const { return rates_.size() * losses_.size(); }

  std::size_t rate_index(int rate_kbps) const;
  std::size_t loss_index(double loss_percent) const;
  /// Row-major over (rate, loss).
  std::size_t condition_index(const NetworkState& s) const;
  NetworkState condition(std::size_t index) const;
  NetworkState state(std::size_t rate_idx, std::size_t loss_idx) const;
  bool contains(const NetworkState& s) const;

  bool operator==(const ClassSets&) const = default;

 private:
  std::vector<int> rates_;
  std::vector<double> losses_;
};

/// Parses "1200,1600" / "0.05,0.1,0.25" style lists.
std::vector<int> parse_int_list(const std::string& text);
std::vector<double> parse_double_list(const std::string& text);

}  // namespace vqos

#pragma once

#include <span>
#include <string>
#include <vector>

namespace gaia {

// Exact floating-point accumulation (Shewchuk partials). value() is the
// correctly rounded sum of everything added so far.
class ExactSum {
 public:
  void add(double x);
  double value() const;
  bool empty() const { return partials_.empty() && count_ == 0; }

 private:
  std::vector<double> partials_;
  std::size_t count_ = 0;
};

double exact_sum(std::span<const double> values);

// Median of a copy of the input; empty input is a precondition violation.
double median(std::vector<double> values);

// Shortest decimal text that round-trips to the same double.
std::string format_number(double value);

}  // namespace gaia

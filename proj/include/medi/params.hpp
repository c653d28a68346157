#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace medi::nn {

struct Segment {
  std::string name;
  std::size_t offset = 0;
  std::size_t size = 0;
};

/// Named, contiguous, non-overlapping index ranges covering a flat vector.
class Layout {
 public:
  Layout() = default;
  explicit Layout(std::vector<Segment> segments);

  /// Appends a segment at the current end and returns its offset.
  std::size_t append(std::string name, std::size_t size);

  [[nodiscard]] std::size_t total() const { return total_; }
  [[nodiscard]] const std::vector<Segment>& segments() const { return segments_; }
  [[nodiscard]] const Segment& at(const std::string& name) const;
  [[nodiscard]] std::optional<Segment> find(const std::string& name) const;
  /// Segment holding flat index `index`.
  [[nodiscard]] const Segment& owner(std::size_t index) const;

  bool operator==(const Layout&) const;

 private:
  std::vector<Segment> segments_;
  std::size_t total_ = 0;
};

struct ParameterVector {
  std::vector<double> values;
  Layout layout;

  ParameterVector() = default;
  explicit ParameterVector(Layout l) : values(l.total(), 0.0), layout(std::move(l)) {}
  ParameterVector(Layout l, std::vector<double> v);

  [[nodiscard]] std::size_t size() const { return values.size(); }
  [[nodiscard]] std::span<double> segment(const std::string& name);
  [[nodiscard]] std::span<const double> segment(const std::string& name) const;

  /// Splits into per-segment copies.
  [[nodiscard]] std::map<std::string, std::vector<double>> unflatten() const;
  static ParameterVector flatten(const Layout& layout,
                                 const std::map<std::string, std::vector<double>>& parts);

  /// Throws NumericError naming the first segment holding a non-finite value.
  void check_finite(const std::string& what) const;
};

// Checkpoints: `<path>` holds the raw little-endian doubles, `<path>.layout.json`
// the segment table. Reloading is bit-exact.
void save_checkpoint(const std::string& path, const ParameterVector& params,
                     const std::map<std::string, std::string>& metadata = {});
ParameterVector load_checkpoint(const std::string& path,
                                std::map<std::string, std::string>* metadata = nullptr);

}  // namespace medi::nn

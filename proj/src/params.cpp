#include "medi/params.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "medi/error.hpp"

namespace medi::nn {

Layout::Layout(std::vector<Segment> segments) {
  for (auto& s : segments) {
    if (s.offset != total_) {
      throw ValidationError("layout segment '" + s.name + "' is not contiguous");
    }
    append(std::move(s.name), s.size);
  }
}

std::size_t Layout::append(std::string name, std::size_t size) {
  if (find(name)) throw ValidationError("duplicate layout segment '" + name + "'");
  const std::size_t offset = total_;
  segments_.push_back({std::move(name), offset, size});
  total_ += size;
  return offset;
}

const Segment& Layout::at(const std::string& name) const {
  for (const auto& s : segments_) {
    if (s.name == name) return s;
  }
  throw ValidationError("no layout segment '" + name + "'");
}

std::optional<Segment> Layout::find(const std::string& name) const {
  for (const auto& s : segments_) {
    if (s.name == name) return s;
  }
  return std::nullopt;
}

const Segment& Layout::owner(std::size_t index) const {
  auto it = std::upper_bound(segments_.begin(), segments_.end(), index,
                             [](std::size_t i, const Segment& s) { return i < s.offset; });
  if (it == segments_.begin() || index >= total_) {
    throw ValidationError("index outside layout");
  }
  --it;
  // Step back over zero-size segments sitting at the boundary.
  while (index >= it->offset + it->size) --it;
  return *it;
}

bool Layout::operator==(const Layout& o) const {
  if (total_ != o.total_ || segments_.size() != o.segments_.size()) return false;
  for (std::size_t i = 0; i < segments_.size(); ++i) {
    const auto& a = segments_[i];
    const auto& b = o.segments_[i];
    if (a.name != b.name || a.offset != b.offset || a.size != b.size) return false;
  }
  return true;
}

ParameterVector::ParameterVector(Layout l, std::vector<double> v)
    : values(std::move(v)), layout(std::move(l)) {
  if (values.size() != layout.total()) {
    throw ShapeError("parameter vector size " + std::to_string(values.size()) +
                     " does not match layout total " + std::to_string(layout.total()));
  }
}

std::span<double> ParameterVector::segment(const std::string& name) {
  const auto& s = layout.at(name);
  return std::span<double>(values).subspan(s.offset, s.size);
}

std::span<const double> ParameterVector::segment(const std::string& name) const {
  const auto& s = layout.at(name);
  return std::span<const double>(values).subspan(s.offset, s.size);
}

std::map<std::string, std::vector<double>> ParameterVector::unflatten() const {
  std::map<std::string, std::vector<double>> parts;
  for (const auto& s : layout.segments()) {
    parts[s.name].assign(values.begin() + static_cast<long>(s.offset),
                         values.begin() + static_cast<long>(s.offset + s.size));
  }
  return parts;
}

ParameterVector ParameterVector::flatten(const Layout& layout,
                                         const std::map<std::string, std::vector<double>>& parts) {
  ParameterVector p(layout);
  if (parts.size() != layout.segments().size()) {
    throw ShapeError("flatten: part count does not match layout");
  }
  for (const auto& s : layout.segments()) {
    auto it = parts.find(s.name);
    if (it == parts.end() || it->second.size() != s.size) {
      throw ShapeError("flatten: missing or mis-sized part '" + s.name + "'");
    }
    std::copy(it->second.begin(), it->second.end(), p.values.begin() + static_cast<long>(s.offset));
  }
  return p;
}

void ParameterVector::check_finite(const std::string& what) const {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NumericError(what + ": non-finite value in segment '" + layout.owner(i).name +
                         "' at flat index " + std::to_string(i));
    }
  }
}

void save_checkpoint(const std::string& path, const ParameterVector& params,
                     const std::map<std::string, std::string>& metadata) {
  static_assert(std::endian::native == std::endian::little, "checkpoint writer assumes LE");
  std::ofstream bin(path, std::ios::binary);
  if (!bin) throw ValidationError("cannot write " + path);
  bin.write(reinterpret_cast<const char*>(params.values.data()),
            static_cast<std::streamsize>(params.values.size() * sizeof(double)));

  nlohmann::json side;
  side["format"] = "medi-params-v1";
  side["total"] = params.layout.total();
  for (const auto& s : params.layout.segments()) {
    side["segments"].push_back({{"name", s.name}, {"offset", s.offset}, {"size", s.size}});
  }
  side["metadata"] = metadata;
  std::ofstream txt(path + ".layout.json");
  if (!txt) throw ValidationError("cannot write " + path + ".layout.json");
  txt << side.dump(2) << '\n';
}

ParameterVector load_checkpoint(const std::string& path,
                                std::map<std::string, std::string>* metadata) {
  std::ifstream txt(path + ".layout.json");
  if (!txt) throw ValidationError("cannot read " + path + ".layout.json");
  nlohmann::json side;
  try {
    txt >> side;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("bad layout sidecar: " + std::string(e.what()));
  }
  std::vector<Segment> segs;
  for (const auto& s : side.at("segments")) {
    segs.push_back({s.at("name").get<std::string>(), s.at("offset").get<std::size_t>(),
                    s.at("size").get<std::size_t>()});
  }
  Layout layout(std::move(segs));
  if (layout.total() != side.at("total").get<std::size_t>()) {
    throw ValidationError("layout sidecar total does not match its segments");
  }
  if (metadata && side.contains("metadata")) {
    *metadata = side["metadata"].get<std::map<std::string, std::string>>();
  }

  std::ifstream bin(path, std::ios::binary | std::ios::ate);
  if (!bin) throw ValidationError("cannot read " + path);
  const auto bytes = static_cast<std::size_t>(bin.tellg());
  if (bytes != layout.total() * sizeof(double)) {
    throw ValidationError("checkpoint " + path + " has " + std::to_string(bytes) +
                          " bytes, layout expects " +
                          std::to_string(layout.total() * sizeof(double)));
  }
  bin.seekg(0);
  std::vector<double> values(layout.total());
  bin.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(bytes));
  return ParameterVector(std::move(layout), std::move(values));
}

}  // namespace medi::nn

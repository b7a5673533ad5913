#include "splatshard/checkpoint.hpp"

#include "splatshard/errors.hpp"
#include "splatshard/io.hpp"

#include <bit>
#include <cstring>

namespace splatshard {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

class Writer {
 public:
  template <typename T>
  void put(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes.insert(bytes.end(), p, p + sizeof(T));
  }
  void raw(std::span<const std::uint8_t> data) { bytes.insert(bytes.end(), data.begin(), data.end()); }

  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  Reader(std::span<const std::uint8_t> data, std::string source) : data_(data), source_(std::move(source)) {}

  template <typename T>
  T get(const char* field) {
    need(sizeof(T), field);
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::span<const std::uint8_t> raw(std::size_t n, const char* field) {
    need(n, field);
    auto out = data_.subspan(pos_, n);
    pos_ += n;
    return out;
  }
  std::uint64_t count(const char* field, std::uint64_t bytes_per_item) {
    const auto n = get<std::uint64_t>(field);
    if (bytes_per_item > 0 && n > (data_.size() - pos_) / bytes_per_item)
      throw ParseError(source_, 0, field, "count exceeds the remaining data");
    return n;
  }
  bool done() const { return pos_ == data_.size(); }
  const std::string& source() const { return source_; }

 private:
  void need(std::size_t n, const char* field) {
    if (data_.size() - pos_ < n) throw ParseError(source_, 0, field, "truncated checkpoint");
  }

  std::span<const std::uint8_t> data_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const TrainState& s) {
  Writer w;
  for (char c : {'B', 'Z', 'G', 'S'}) w.put(c);
  w.put(kCheckpointVersion);
  w.put(s.config_hash);
  w.put(s.step);
  w.put(s.d0);
  w.put(std::uint32_t(s.shards.m_ranks));
  const auto n = std::uint64_t(s.model.size());
  w.put(n);
  for (const auto& g : s.model) {
    for (int k = 0; k < kParamCount; ++k) w.put(g.params[k]);
    w.put(std::int32_t(g.lod_level));
  }
  for (int owner : s.shards.owner_of) w.put(std::int32_t(owner));
  w.put(s.adam.step);
  for (const auto& m : s.adam.m)
    for (int k = 0; k < kParamCount; ++k) w.put(m[k]);
  for (const auto& v : s.adam.v)
    for (int k = 0; k < kParamCount; ++k) w.put(v[k]);
  for (double a : s.stats.grad_accum) w.put(a);
  for (std::int32_t c : s.stats.count) w.put(c);
  for (double p : s.stats.phi) w.put(p);
  w.put(std::uint8_t(s.report ? 1 : 0));
  if (s.report) {
    const auto& r = *s.report;
    w.put(r.pass_step);
    w.put(std::uint64_t(r.view_camera_ids.size()));
    for (int id : r.view_camera_ids) w.put(std::int32_t(id));
    for (double v : r.s) w.put(v);
    for (std::int32_t v : r.c_rad) w.put(v);
    for (std::int32_t v : r.c_vis) w.put(v);
    for (double v : r.phi) w.put(v);
    const auto blob = r.cull.to_blob();
    w.put(std::uint64_t(blob.size()));
    w.raw(blob);
  }
  const auto counters = s.counters.items();
  w.put(std::uint64_t(counters.size()));
  for (const auto& [name, value] : counters) {
    w.put(std::uint32_t(name.size()));
    w.raw({reinterpret_cast<const std::uint8_t*>(name.data()), name.size()});
    w.put(value);
  }
  return w.bytes;
}

TrainState deserialize_checkpoint(std::span<const std::uint8_t> bytes, const std::string& source) {
  Reader r(bytes, source);
  char magic[4];
  for (char& c : magic) c = r.get<char>("magic");
  if (std::memcmp(magic, "BZGS", 4) != 0) throw ParseError(source, 0, "magic", "not a checkpoint");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion)
    throw VersionError(source + ": checkpoint version " + std::to_string(version) +
                       ", this build reads version " + std::to_string(kCheckpointVersion));
  TrainState s;
  s.config_hash = r.get<std::uint64_t>("config_hash");
  s.step = r.get<std::int64_t>("step");
  s.d0 = r.get<double>("d0");
  const auto m_ranks = int(r.get<std::uint32_t>("m_ranks"));
  if (m_ranks < 1) throw ParseError(source, 0, "m_ranks", "must be at least 1");
  const auto n = std::size_t(r.count("n_gaussians", kParamCount * 8 + 4));
  s.model.resize(n);
  for (auto& g : s.model) {
    for (int k = 0; k < kParamCount; ++k) g.params[k] = r.get<double>("params");
    g.lod_level = r.get<std::int32_t>("lod_level");
  }
  std::vector<int> owners(n);
  for (int& o : owners) {
    o = r.get<std::int32_t>("owner");
    if (o < 0 || o >= m_ranks) throw ParseError(source, 0, "owner", "rank out of range");
  }
  s.shards = ShardMap::from_owners(std::move(owners), m_ranks);
  s.adam = AdamState(n);
  s.adam.step = r.get<std::int64_t>("adam_step");
  for (auto& m : s.adam.m)
    for (int k = 0; k < kParamCount; ++k) m[k] = r.get<double>("adam_m");
  for (auto& v : s.adam.v)
    for (int k = 0; k < kParamCount; ++k) v[k] = r.get<double>("adam_v");
  s.stats = DensifyStats(n);
  for (double& a : s.stats.grad_accum) a = r.get<double>("grad_accum");
  for (std::int32_t& c : s.stats.count) c = r.get<std::int32_t>("grad_count");
  for (double& p : s.stats.phi) p = r.get<double>("phi_weight");
  if (r.get<std::uint8_t>("has_report")) {
    ImportanceReport rep;
    rep.pass_step = r.get<std::int64_t>("pass_step");
    const auto v = std::size_t(r.count("views", 4));
    for (std::size_t k = 0; k < v; ++k) rep.view_camera_ids.push_back(r.get<std::int32_t>("view_camera_id"));
    rep.s.resize(n);
    rep.c_rad.resize(n);
    rep.c_vis.resize(n);
    rep.phi.resize(n);
    for (double& x : rep.s) x = r.get<double>("score");
    for (std::int32_t& x : rep.c_rad) x = r.get<std::int32_t>("c_rad");
    for (std::int32_t& x : rep.c_vis) x = r.get<std::int32_t>("c_vis");
    for (double& x : rep.phi) x = r.get<double>("phi");
    const auto blob_size = std::size_t(r.count("cull_bytes", 1));
    try {
      rep.cull = CullMatrix::from_blob(r.raw(blob_size, "cull"));
    } catch (const ContractViolation& e) {
      throw ParseError(source, 0, "cull", e.what());
    }
    if (rep.cull.rows() != n || rep.cull.cols() != v)
      throw ParseError(source, 0, "cull", "matrix shape does not match the model");
    s.report = std::move(rep);
  }
  const auto counters = std::size_t(r.count("counters", 12));
  for (std::size_t k = 0; k < counters; ++k) {
    const auto len = r.get<std::uint32_t>("counter_name");
    const auto name = r.raw(len, "counter_name");
    const auto value = r.get<std::int64_t>("counter_value");
    try {
      s.counters.set(std::string(name.begin(), name.end()), value);
    } catch (const ContractViolation& e) {
      throw ParseError(source, 0, "counters", e.what());
    }
  }
  if (!r.done()) throw ParseError(source, 0, "trailer", "unexpected bytes after the checkpoint");
  return s;
}

void save_checkpoint(const std::filesystem::path& path, const TrainState& state) {
  const auto bytes = serialize_checkpoint(state);
  write_text(path, std::string(bytes.begin(), bytes.end()));
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  const std::string text = read_text(path);
  return deserialize_checkpoint(
      {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()}, path.string());
}

}  // namespace splatshard

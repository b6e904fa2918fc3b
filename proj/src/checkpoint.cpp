#include "mtm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>

#include "mtm/errors.hpp"

namespace mtm::ckpt {

namespace {

constexpr char kMagic[8] = {'M', 'T', 'M', 'C', 'K', 'P', 'T', '\0'};

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : bytes_(b) {}
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(std::string("checkpoint truncated while reading ") + what + " at byte " + std::to_string(pos_));
    }
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::array<std::size_t*, 10> config_fields(det::ModelConfig& c) {
  return {&c.embed_dim, &c.object_queries, &c.encoder_layers, &c.decoder_layers, &c.heads,
          &c.num_classes, &c.patch_size, &c.image_size, &c.ffn_dim, &c.channels};
}

template <typename Module>
void collect(Module& module, const std::string& prefix, std::vector<ag::NamedTensor>& out) {
  module.for_each_param(prefix, [&](const std::string& name, ag::Tensor& t) { out.push_back({name, t}); });
}

Record record_of(const std::string& name, const ag::Tensor& t) {
  return {name, t.shape(), std::vector<double>(t.data().begin(), t.data().end())};
}

}  // namespace

const Record* Checkpoint::find(const std::string& name) const {
  for (const Record& r : records) {
    if (r.name == name) return &r;
  }
  return nullptr;
}

bool Checkpoint::has_prefix(const std::string& prefix) const {
  for (const Record& r : records) {
    if (r.name.compare(0, prefix.size(), prefix) == 0) return true;
  }
  return false;
}

std::vector<std::uint8_t> serialize(const Checkpoint& checkpoint) {
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.u32(kVersion);
  det::ModelConfig cfg = checkpoint.config;
  for (std::size_t* f : config_fields(cfg)) w.u64(*f);
  w.u64(checkpoint.records.size());
  for (const Record& r : checkpoint.records) {
    if (ag::numel(r.shape) != r.values.size()) throw ContractError("serialize: record '" + r.name + "' shape mismatch");
    w.u32(static_cast<std::uint32_t>(r.name.size()));
    w.bytes(r.name.data(), r.name.size());
    w.u32(static_cast<std::uint32_t>(r.shape.size()));
    for (std::size_t d : r.shape) w.u64(d);
    for (double v : r.values) w.f64(v);
  }
  return std::move(w.out);
}

Checkpoint deserialize(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const std::string magic = r.str(sizeof kMagic, "magic");
  if (std::memcmp(magic.data(), kMagic, sizeof kMagic) != 0) throw FormatError("not a checkpoint: bad magic bytes");
  const std::uint32_t version = r.u32("version");
  if (version != kVersion) {
    throw FormatError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kVersion) + ")");
  }
  Checkpoint out;
  for (std::size_t* f : config_fields(out.config)) *f = static_cast<std::size_t>(r.u64("model config"));
  try {
    out.config.validate();
  } catch (const ContractError& e) {
    throw FormatError(std::string("checkpoint holds an invalid model config: ") + e.what());
  }
  const std::uint64_t count = r.u64("record count");
  std::set<std::string> names;
  for (std::uint64_t i = 0; i < count; ++i) {
    Record rec;
    const std::uint32_t len = r.u32("name length");
    rec.name = r.str(len, "name");
    if (!names.insert(rec.name).second) throw FormatError("checkpoint has duplicate record '" + rec.name + "'");
    const std::uint32_t rank = r.u32("rank");
    std::uint64_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const std::uint64_t dim = r.u64("dims");
      rec.shape.push_back(static_cast<std::size_t>(dim));
      n *= dim;
    }
    r.need(n * 8, "values");
    rec.values.resize(n);
    for (double& v : rec.values) v = r.f64("values");
    out.records.push_back(std::move(rec));
  }
  if (r.remaining() != 0) throw FormatError("checkpoint has " + std::to_string(r.remaining()) + " trailing bytes");
  return out;
}

void write_file(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  const auto bytes = serialize(checkpoint);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("failed writing checkpoint " + path.string());
}

Checkpoint read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return deserialize(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

Checkpoint capture(det::Detector& model, align::Discriminators* discs, mt::Oqkt* oqkt, const ag::Adam* optimizer) {
  Checkpoint out;
  out.config = model.config();
  std::vector<ag::NamedTensor> params;
  collect(model, "det.", params);
  if (discs) collect(*discs, "disc.", params);
  if (oqkt) collect(*oqkt, "", params);
  for (const auto& p : params) out.records.push_back(record_of(p.name, p.tensor));
  if (optimizer) {
    out.records.push_back({"opt.step", {1}, {static_cast<double>(optimizer->step_count())}});
    const auto& ps = optimizer->params();
    for (std::size_t i = 0; i < ps.size(); ++i) {
      out.records.push_back({"opt.m." + ps[i].name, ps[i].tensor.shape(), optimizer->first_moments()[i]});
    }
    for (std::size_t i = 0; i < ps.size(); ++i) {
      out.records.push_back({"opt.v." + ps[i].name, ps[i].tensor.shape(), optimizer->second_moments()[i]});
    }
  }
  return out;
}

void restore(const Checkpoint& checkpoint, det::Detector& model, align::Discriminators* discs, mt::Oqkt* oqkt,
             ag::Adam* optimizer) {
  if (!(checkpoint.config == model.config())) throw FormatError("checkpoint model config differs from the target model");
  std::vector<ag::NamedTensor> params;
  collect(model, "det.", params);
  if (discs) collect(*discs, "disc.", params);
  if (oqkt) collect(*oqkt, "", params);

  std::vector<const Record*> sources;
  for (const auto& p : params) {
    const Record* rec = checkpoint.find(p.name);
    if (!rec) throw FormatError("checkpoint is missing parameter '" + p.name + "'");
    if (rec->shape != p.tensor.shape()) {
      throw FormatError("checkpoint parameter '" + p.name + "' has shape " + ag::shape_str(rec->shape) + ", expected " +
                        ag::shape_str(p.tensor.shape()));
    }
    sources.push_back(rec);
  }
  std::int64_t step = 0;
  std::vector<std::vector<double>> m, v;
  if (optimizer) {
    const Record* s = checkpoint.find("opt.step");
    if (!s || s->values.size() != 1) throw FormatError("checkpoint has no optimizer state");
    step = static_cast<std::int64_t>(s->values[0]);
    for (const auto& p : optimizer->params()) {
      const Record* rm = checkpoint.find("opt.m." + p.name);
      const Record* rv = checkpoint.find("opt.v." + p.name);
      if (!rm || !rv || rm->values.size() != p.tensor.size() || rv->values.size() != p.tensor.size()) {
        throw FormatError("checkpoint optimizer state for '" + p.name + "' is missing or malformed");
      }
      m.push_back(rm->values);
      v.push_back(rv->values);
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = params[i].tensor.mutable_data();
    std::copy(sources[i]->values.begin(), sources[i]->values.end(), dst.begin());
  }
  if (optimizer) optimizer->restore(step, std::move(m), std::move(v));
}

void save_checkpoint(det::Detector& model, align::Discriminators* discs, const ag::Adam* optimizer,
                     const std::filesystem::path& path, mt::Oqkt* oqkt) {
  write_file(capture(model, discs, oqkt, optimizer), path);
}

LoadedState load_checkpoint(const std::filesystem::path& path) {
  Checkpoint raw = read_file(path);
  det::Detector model(raw.config, 0);
  align::Discriminators discs;
  const bool has_discs = raw.has_prefix("disc.");
  if (has_discs) discs = align::Discriminators(raw.config.embed_dim, 0);
  restore(raw, model, has_discs ? &discs : nullptr);
  return {std::move(model), std::move(discs), has_discs, std::move(raw)};
}

}  // namespace mtm::ckpt

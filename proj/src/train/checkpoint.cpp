#include "scpr/train/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <unordered_map>

namespace scpr {

namespace {

constexpr char kMagic[5] = {'S', 'C', 'P', 'R', '1'};
constexpr std::string_view kDtype = "f32";

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little endian");

class Writer {
 public:
  explicit Writer(std::ofstream& out) : out_(out) {}
  void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void u64(std::uint64_t v) { bytes(&v, 8); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }

 private:
  std::ofstream& out_;
};

class Reader {
 public:
  Reader(std::ifstream& in, const std::string& path) : in_(in), path_(path) {}
  void bytes(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n)
      throw FormatError("checkpoint '" + path_ + "' is truncated");
  }
  std::uint32_t u32() {
    std::uint32_t v;
    bytes(&v, 4);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    bytes(&v, 8);
    return v;
  }
  std::string str(std::size_t limit) {
    const std::uint32_t n = u32();
    if (n > limit) throw FormatError("checkpoint '" + path_ + "' has an implausible string length");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }

 private:
  std::ifstream& in_;
  const std::string& path_;
};

template <typename T>
CheckpointRecord make_record(std::string name, const Tensor<T>& t) {
  CheckpointRecord r;
  r.name = std::move(name);
  r.shape.assign(t.shape().begin(), t.shape().end());
  r.data.assign(t.values().begin(), t.values().end());
  return r;
}

template <typename T>
void restore(const CheckpointRecord& r, Tensor<T>& t, const std::string& path) {
  const Shape shape(r.shape.begin(), r.shape.end());
  if (shape != t.shape())
    throw FormatError("checkpoint '" + path + "': tensor '" + r.name + "' has shape " +
                      shape_string(shape) + ", model expects " + shape_string(t.shape()));
  std::copy(r.data.begin(), r.data.end(), t.values().begin());
}

}  // namespace

void write_checkpoint(const std::string& path, const std::vector<CheckpointRecord>& records) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write checkpoint '" + path + "'");
    Writer w(out);
    w.bytes(kMagic, sizeof kMagic);
    w.u32(static_cast<std::uint32_t>(records.size()));
    for (const auto& r : records) {
      w.str(r.name);
      w.str(kDtype);
      w.u32(static_cast<std::uint32_t>(r.shape.size()));
      std::uint64_t n = 1;
      for (auto e : r.shape) {
        w.u64(e);
        n *= e;
      }
      if (n != r.data.size())
        throw FormatError("checkpoint record '" + r.name + "' payload does not match its shape");
    }
    for (const auto& r : records) w.bytes(r.data.data(), r.data.size() * sizeof(float));
    out.flush();
    if (!out) throw FormatError("failed writing checkpoint '" + path + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw FormatError("cannot move checkpoint into place at '" + path + "': " + ec.message());
}

std::vector<CheckpointRecord> read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint '" + path + "'");
  Reader rd(in, path);
  char magic[sizeof kMagic];
  rd.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw FormatError("'" + path + "' is not an SCPR1 checkpoint");
  const std::uint32_t count = rd.u32();
  std::vector<CheckpointRecord> records(count);
  for (auto& r : records) {
    r.name = rd.str(1 << 16);
    const std::string dtype = rd.str(16);
    if (dtype != kDtype)
      throw FormatError("checkpoint '" + path + "': tensor '" + r.name + "' has unsupported dtype '" + dtype + "'");
    const std::uint32_t rank = rd.u32();
    if (rank > 8) throw FormatError("checkpoint '" + path + "': tensor '" + r.name + "' has rank " + std::to_string(rank));
    std::uint64_t n = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      r.shape.push_back(rd.u64());
      n *= r.shape.back();
    }
    if (n > (std::uint64_t{1} << 34)) throw FormatError("checkpoint '" + path + "': tensor '" + r.name + "' is implausibly large");
    r.data.resize(n);
  }
  for (auto& r : records) rd.bytes(r.data.data(), r.data.size() * sizeof(float));
  if (in.peek() != std::char_traits<char>::eof())
    throw FormatError("checkpoint '" + path + "' has trailing bytes");
  return records;
}

template <typename T>
std::vector<CheckpointRecord> checkpoint_records(const ParameterSet<T>& params, const AdamW<T>* optim) {
  std::vector<CheckpointRecord> out;
  for (std::size_t i = 0; i < params.size(); ++i) out.push_back(make_record(params[i].name, params[i].value));
  if (optim) {
    for (std::size_t i = 0; i < params.size(); ++i)
      out.push_back(make_record("optim.m." + params[i].name, optim->first_moments()[i]));
    for (std::size_t i = 0; i < params.size(); ++i)
      out.push_back(make_record("optim.v." + params[i].name, optim->second_moments()[i]));
    CheckpointRecord step;
    step.name = "optim.step";
    step.shape = {1};
    step.data = {static_cast<float>(optim->step_count())};
    out.push_back(std::move(step));
  }
  return out;
}

template <typename T>
void save_checkpoint(const std::string& path, const ParameterSet<T>& params, const AdamW<T>* optim) {
  write_checkpoint(path, checkpoint_records(params, optim));
}

template <typename T>
void load_checkpoint(const std::string& path, ParameterSet<T>& params, AdamW<T>* optim) {
  const auto records = read_checkpoint(path);
  std::unordered_map<std::string, const CheckpointRecord*> by_name;
  for (const auto& r : records) {
    if (!r.name.starts_with("optim.") && params.find(r.name) == nullptr)
      throw FormatError("checkpoint '" + path + "': tensor '" + r.name + "' does not exist in the model");
    by_name.emplace(r.name, &r);
  }
  auto need = [&](const std::string& name) -> const CheckpointRecord& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("checkpoint '" + path + "' lacks tensor '" + name + "'");
    return *it->second;
  };
  // Validate everything before touching the model.
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& r = need(params[i].name);
    if (Shape(r.shape.begin(), r.shape.end()) != params[i].value.shape()) {
      Tensor<T> probe = params[i].value;
      restore(r, probe, path);
    }
  }
  if (optim) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      need("optim.m." + params[i].name);
      need("optim.v." + params[i].name);
    }
    if (need("optim.step").data.size() != 1) throw FormatError("checkpoint '" + path + "': bad optim.step");
  }
  for (std::size_t i = 0; i < params.size(); ++i) restore(need(params[i].name), params[i].value, path);
  if (optim) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      restore(need("optim.m." + params[i].name), optim->first_moments()[i], path);
      restore(need("optim.v." + params[i].name), optim->second_moments()[i], path);
    }
    optim->set_step_count(static_cast<std::size_t>(need("optim.step").data[0]));
  }
}

#define SCPR_INSTANTIATE_CKPT(T)                                                                   \
  template std::vector<CheckpointRecord> checkpoint_records<T>(const ParameterSet<T>&,             \
                                                               const AdamW<T>*);                   \
  template void save_checkpoint<T>(const std::string&, const ParameterSet<T>&, const AdamW<T>*);   \
  template void load_checkpoint<T>(const std::string&, ParameterSet<T>&, AdamW<T>*);

SCPR_INSTANTIATE_CKPT(float)
SCPR_INSTANTIATE_CKPT(double)

#undef SCPR_INSTANTIATE_CKPT

}  // namespace scpr

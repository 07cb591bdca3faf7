#include "binrep/packed.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>

#include "binrep/error.hpp"
#include "binrep/kernels.hpp"

namespace binrep {

namespace {

constexpr char kMagic[4] = {'B', 'N', 'E', 'T'};
constexpr std::uint32_t kVersion = 1;

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

bool valid_kind(std::uint8_t k) { return k >= 1 && k <= 7; }

bool is_binary_kind(PackedKind k) {
  return k == PackedKind::BinaryConv || k == PackedKind::BinaryFc || k == PackedKind::Head;
}

bool is_stepped_kind(PackedKind k) {
  return k == PackedKind::RealConv || k == PackedKind::RealFc || k == PackedKind::BinaryConv ||
         k == PackedKind::BinaryFc;
}

int sign_of(double k) { return k > 0.0 ? 1 : (k < 0.0 ? -1 : 0); }

// ---- serialization ---------------------------------------------------------

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void shape(const Shape& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    for (std::size_t d : s) u64(d);
  }
  void tensor(const Tensor& t) {
    shape(t.shape());
    for (double v : t.values()) f64(v);
  }
  std::vector<std::uint8_t>& buffer() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return b_.size() - pos_; }

  void need(std::size_t n, const char* what) const {
    if (n > remaining()) {
      throw FormatError(std::string("truncated packed model while reading ") + what, pos_);
    }
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return b_[pos_++];
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{b_[pos_ + i]} << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{b_[pos_ + i]} << (8 * i);
    pos_ += 8;
    return v;
  }
  std::int64_t i64(const char* what) { return static_cast<std::int64_t>(u64(what)); }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }

  // Element count guarded against the bytes actually left.
  std::size_t count(std::size_t elem_size, const char* what) {
    const std::size_t at = pos_;
    const std::uint64_t n = u64(what);
    if (n > remaining() / elem_size) {
      throw FormatError(std::string("implausible ") + what + " count " + std::to_string(n), at);
    }
    return static_cast<std::size_t>(n);
  }
  Shape shape(const char* what) {
    const std::size_t at = pos_;
    const std::uint32_t rank = u32(what);
    if (rank > 8) throw FormatError(std::string("implausible rank for ") + what, at);
    Shape s(rank);
    for (auto& d : s) {
      const std::size_t dat = pos_;
      d = u64(what);
      if (d == 0 || d > (std::uint64_t{1} << 32)) {
        throw FormatError(std::string("bad dimension in ") + what, dat);
      }
    }
    return s;
  }
  Tensor tensor(const char* what) {
    const std::size_t at = pos_;
    Shape s = shape(what);
    if (s.empty()) return Tensor();
    const std::size_t n = shape_size(s);
    if (n > remaining() / 8) throw FormatError(std::string("truncated ") + what, at);
    std::vector<double> v(n);
    for (auto& x : v) x = f64(what);
    return Tensor(std::move(s), std::move(v));
  }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

void write_layer(Writer& w, const PackedLayer& l) {
  w.shape(l.in_shape);
  w.shape(l.out_shape);
  w.u32(l.kernel_h);
  w.u32(l.kernel_w);
  w.u32(l.stride);
  w.u32(l.pad);
  w.u64(l.row_bits);
  w.u64(l.weight_bits.size());
  for (auto word : l.weight_bits) w.u64(word);
  if (l.real_weight.empty()) {
    w.u32(0);
  } else {
    w.tensor(l.real_weight);
  }
  if (l.real_bias.empty()) {
    w.u32(0);
  } else {
    w.tensor(l.real_bias);
  }
  w.u64(l.bias.size());
  for (double b : l.bias) w.f64(b);
  w.u64(l.thresholds.size());
  for (auto t : l.thresholds) w.i64(t);
  w.u64(l.signs.size());
  for (auto s : l.signs) w.u8(static_cast<std::uint8_t>(s));
}

PackedLayer read_layer(Reader& r, PackedKind kind) {
  PackedLayer l;
  l.kind = kind;
  l.in_shape = r.shape("input shape");
  l.out_shape = r.shape("output shape");
  l.kernel_h = r.u32("kernel height");
  l.kernel_w = r.u32("kernel width");
  l.stride = r.u32("stride");
  l.pad = r.u32("padding");
  l.row_bits = r.u64("row bits");
  l.weight_bits.resize(r.count(8, "weight word"));
  for (auto& word : l.weight_bits) word = r.u64("weight words");
  l.real_weight = r.tensor("real weight");
  l.real_bias = r.tensor("real bias");
  l.bias.resize(r.count(8, "bias"));
  for (auto& b : l.bias) b = r.f64("bias");
  l.thresholds.resize(r.count(8, "threshold"));
  for (auto& t : l.thresholds) t = r.i64("thresholds");
  l.signs.resize(r.count(1, "sign"));
  for (auto& s : l.signs) s = static_cast<std::int8_t>(r.u8("signs"));
  return l;
}

// Structural checks shared by the loader; `at` is the record's offset.
void check_layer(const PackedLayer& l, std::size_t at) {
  auto fail = [&](const std::string& msg) {
    throw FormatError(std::string(packed_kind_name(l.kind)) + " record: " + msg, at);
  };
  const std::size_t channels = l.out_shape.empty() ? 0 : l.out_shape[0];
  if (l.out_shape.empty() || l.in_shape.empty()) fail("missing shape");
  if (is_binary_kind(l.kind)) {
    if (l.row_bits == 0) fail("zero-length weight rows");
    if (l.weight_bits.size() != channels * l.words_per_row()) fail("weight payload size mismatch");
    const std::size_t tail = l.row_bits % kWordBits;
    if (tail) {
      const std::uint64_t mask = ~((std::uint64_t{1} << tail) - 1);
      for (std::size_t o = 0; o < channels; ++o)
        if (l.weight_bits[(o + 1) * l.words_per_row() - 1] & mask) fail("non-zero padding bits");
    }
    if (l.bias.size() != channels) fail("bias count mismatch");
  }
  if (is_stepped_kind(l.kind)) {
    if (l.signs.size() != channels) fail("sign count mismatch");
    for (auto s : l.signs)
      if (s < -1 || s > 1) fail("sign outside {-1,0,1}");
  }
  if ((l.kind == PackedKind::BinaryConv || l.kind == PackedKind::BinaryFc) &&
      l.thresholds.size() != channels) {
    fail("threshold count mismatch");
  }
  if (l.kind == PackedKind::RealConv || l.kind == PackedKind::RealFc) {
    if (l.real_weight.empty() || l.real_bias.empty()) fail("missing real parameters");
    if (l.real_weight.dim(0) != channels || l.real_bias.size() != channels) {
      fail("real parameter shape mismatch");
    }
  }
  const bool conv = l.kind == PackedKind::RealConv || l.kind == PackedKind::BinaryConv;
  if ((conv || l.kind == PackedKind::MaxPool) &&
      (l.in_shape.size() != 3 || l.out_shape.size() != 3 || l.kernel_h == 0 || l.kernel_w == 0 ||
       l.stride == 0)) {
    fail("bad spatial geometry");
  }
  if (l.kind == PackedKind::BinaryConv &&
      l.row_bits != std::uint64_t{l.in_shape[0]} * l.kernel_h * l.kernel_w) {
    fail("row length does not match kernel");
  }
  if ((l.kind == PackedKind::BinaryFc || l.kind == PackedKind::Head) &&
      l.row_bits != shape_size(l.in_shape)) {
    fail("row length does not match input");
  }
  if (l.kind == PackedKind::Flatten && shape_size(l.in_shape) != shape_size(l.out_shape)) {
    fail("flatten changes element count");
  }
}

// ---- export helpers --------------------------------------------------------

void pack_sign_rows(const Tensor& weight, const std::string& name, std::size_t layer_index,
                    PackedLayer& out) {
  const std::size_t rows = weight.dim(0);
  const std::size_t per = weight.size() / rows;
  out.row_bits = per;
  const std::size_t wpr = words_for(per);
  out.weight_bits.assign(rows * wpr, 0);
  for (std::size_t o = 0; o < rows; ++o) {
    for (std::size_t j = 0; j < per; ++j) {
      const double v = weight[o * per + j];
      if (v == 1.0) {
        out.weight_bits[o * wpr + j / kWordBits] |= std::uint64_t{1} << (j % kWordBits);
      } else if (v != -1.0) {
        throw ExportError("non-binary weight in " + name + " (layer " +
                          std::to_string(layer_index) + ") at index " +
                          std::to_string(o * per + j) + ": " + std::to_string(v));
      }
    }
  }
}

double elapsed(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - since).count();
}

PackedActivations step_real(const Tensor& y, const PackedLayer& l) {
  // y is [1, channels, ...]; channel c covers a contiguous block.
  PackedActivations out = PackedActivations::zeros(l.out_shape);
  const std::size_t channels = l.out_shape[0];
  const std::size_t inner = y.size() / channels;
  for (std::size_t c = 0; c < channels; ++c) {
    const double k = l.signs[c];
    for (std::size_t i = 0; i < inner; ++i)
      if (step_fires(k, y[c * inner + i])) out.set(c * inner + i);
  }
  return out;
}

}  // namespace

const char* packed_kind_name(PackedKind kind) noexcept {
  switch (kind) {
    case PackedKind::RealConv: return "real-conv";
    case PackedKind::RealFc: return "real-fc";
    case PackedKind::BinaryConv: return "binary-conv";
    case PackedKind::BinaryFc: return "binary-fc";
    case PackedKind::MaxPool: return "maxpool";
    case PackedKind::Flatten: return "flatten";
    case PackedKind::Head: return "head";
  }
  return "unknown";
}

std::size_t PackedLayer::out_channels() const { return out_shape.empty() ? 0 : out_shape[0]; }

std::size_t PackedModel::num_classes() const {
  if (layers.empty() || layers.back().kind != PackedKind::Head) {
    throw StateError("packed model has no head");
  }
  return layers.back().out_shape[0];
}

PackedActivations PackedActivations::zeros(Shape shape) {
  PackedActivations a;
  a.bits.assign(words_for(shape_size(shape)), 0);
  a.shape = std::move(shape);
  return a;
}

std::size_t PackedActivations::count() const {
  std::size_t n = 0;
  for (auto w : bits) n += static_cast<std::size_t>(std::popcount(w));
  return n;
}

PackedActivations pack_bits(std::span<const double> values, Shape shape) {
  if (values.size() != shape_size(shape)) {
    throw DimensionError(std::to_string(values.size()) + " values for shape " +
                         shape_string(shape));
  }
  PackedActivations a = PackedActivations::zeros(std::move(shape));
  for (std::size_t j = 0; j < values.size(); ++j) {
    if (values[j] == 1.0) {
      a.set(j);
    } else if (values[j] != 0.0) {
      throw InputError("value " + std::to_string(values[j]) + " at " + std::to_string(j) +
                       " is not binary");
    }
  }
  return a;
}

std::vector<double> unpack_bits(const PackedActivations& a) {
  std::vector<double> v(a.size());
  for (std::size_t j = 0; j < v.size(); ++j) v[j] = a.get(j) ? 1.0 : 0.0;
  return v;
}

std::int64_t step_threshold(double bias, int sign, std::size_t fan_in) {
  if (sign == 0) return 0;
  const double limit = static_cast<double>(fan_in) + 1.0;
  // s + bias > 0  <=>  s > floor(-bias);  s + bias < 0  <=>  s < ceil(-bias)
  const double t = sign > 0 ? std::floor(-bias) : std::ceil(-bias);
  return static_cast<std::int64_t>(std::clamp(t, -limit, limit));
}

bool threshold_fires(std::int64_t s, std::int64_t threshold, int sign) noexcept {
  return sign > 0 ? s > threshold : (sign < 0 ? s < threshold : false);
}

PackedModel export_packed(const Network& net) {
  net.validate();
  const auto& layers = net.layers();
  const auto affine = net.affine_indices();
  if (affine.size() < 2) throw ExportError("packed export needs at least two affine layers");
  PackedModel m;
  m.input_shape = net.input_shape();
  Shape cur = net.input_shape();
  bool bits = false;

  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string where = std::string(layer_kind_name(layers[i])) + " layer " +
                              std::to_string(i);
    PackedLayer rec;
    rec.in_shape = cur;
    rec.out_shape = net.output_shape(i);

    const auto* conv = std::get_if<ConvLayer>(&layers[i]);
    const auto* fc = std::get_if<FcLayer>(&layers[i]);
    if (conv || fc) {
      const Parameter& weight = conv ? conv->weight : fc->weight;
      const Parameter& bias = conv ? conv->bias : fc->bias;
      for (double b : bias.value.values())
        if (!std::isfinite(b)) throw ExportError("non-finite bias in " + bias.name);
      if (conv) {
        rec.kernel_h = static_cast<std::uint32_t>(weight.value.dim(2));
        rec.kernel_w = static_cast<std::uint32_t>(weight.value.dim(3));
        rec.stride = static_cast<std::uint32_t>(conv->geometry.stride);
        rec.pad = static_cast<std::uint32_t>(conv->geometry.pad);
      }
      const bool first = i == affine.front();
      if (i == affine.back()) {
        if (i + 1 != layers.size()) throw ExportError(where + ": the head must be the last layer");
        if (!bits || !fc) throw ExportError(where + ": the head must be fc over binary units");
        rec.kind = PackedKind::Head;
        pack_sign_rows(weight.value, weight.name, i, rec);
        rec.bias.assign(bias.value.values().begin(), bias.value.values().end());
        m.layers.push_back(std::move(rec));
        continue;
      }
      const auto* act =
          i + 1 < layers.size() ? std::get_if<BoundedLayer>(&layers[i + 1]) : nullptr;
      if (!act) throw ExportError(where + " is not followed by a bounded rectifier");
      if (act->mode != ActivationMode::Step) {
        throw ExportError("bounded layer " + std::to_string(i + 1) + " is not in Step mode");
      }
      rec.out_shape = net.output_shape(i + 1);
      for (double k : act->slopes.value.values()) rec.signs.push_back(static_cast<std::int8_t>(sign_of(k)));
      if (first) {
        if (bits) throw ExportError(where + ": first affine layer sees binary input");
        rec.kind = conv ? PackedKind::RealConv : PackedKind::RealFc;
        rec.real_weight = weight.value;
        rec.real_bias = bias.value;
      } else {
        if (!bits) throw ExportError(where + " sees real-valued input");
        rec.kind = conv ? PackedKind::BinaryConv : PackedKind::BinaryFc;
        pack_sign_rows(weight.value, weight.name, i, rec);
        rec.bias.assign(bias.value.values().begin(), bias.value.values().end());
        for (std::size_t c = 0; c < rec.bias.size(); ++c) {
          rec.thresholds.push_back(step_threshold(rec.bias[c], rec.signs[c], rec.row_bits));
        }
      }
      bits = true;
      cur = rec.out_shape;
      m.layers.push_back(std::move(rec));
      ++i;  // rectifier consumed
      continue;
    }
    std::visit(overloaded{
                   [&](const PoolLayer& p) {
                     if (!bits) {
                       throw ExportError(where + " pools real values; expected conv-act-pool");
                     }
                     rec.kind = PackedKind::MaxPool;
                     rec.kernel_h = rec.kernel_w = static_cast<std::uint32_t>(p.window);
                     rec.stride = static_cast<std::uint32_t>(p.stride);
                   },
                   [&](const FlattenLayer&) { rec.kind = PackedKind::Flatten; },
                   [&](const ReluLayer&) {
                     throw ExportError(where + ": ReLU outputs are not binary");
                   },
                   [&](const BoundedLayer&) {
                     throw ExportError(where + " does not directly follow an affine layer");
                   },
                   [&](const auto&) { throw ExportError(where + ": unsupported"); },
               },
               layers[i]);
    cur = rec.out_shape;
    m.layers.push_back(std::move(rec));
  }
  return m;
}

std::vector<std::uint8_t> serialize_packed(const PackedModel& model) {
  Writer w;
  w.bytes(kMagic, 4);
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(model.layers.size()));
  w.shape(model.input_shape);
  for (const auto& l : model.layers) {
    Writer body;
    write_layer(body, l);
    w.u8(static_cast<std::uint8_t>(l.kind));
    w.u64(body.buffer().size());
    w.bytes(body.buffer().data(), body.buffer().size());
  }
  return std::move(w.buffer());
}

PackedModel deserialize_packed(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.need(4, "magic");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("not a BNET model (bad magic)", 0);
  (void)r.u32("magic");
  const std::uint32_t version = r.u32("version");
  if (version != kVersion) {
    throw FormatError("unsupported BNET version " + std::to_string(version), 4);
  }
  const std::size_t count_at = r.offset();
  const std::uint32_t count = r.u32("layer count");
  if (count == 0 || count > 4096) throw FormatError("implausible layer count", count_at);
  PackedModel m;
  m.input_shape = r.shape("model input shape");
  Shape cur = m.input_shape;
  for (std::uint32_t n = 0; n < count; ++n) {
    const std::size_t at = r.offset();
    const std::uint8_t kind = r.u8("record kind");
    if (!valid_kind(kind)) {
      throw FormatError("unknown record kind " + std::to_string(kind), at);
    }
    const std::uint64_t length = r.u64("record length");
    if (length > r.remaining()) throw FormatError("record length past end of file", at + 1);
    Reader body(bytes.subspan(r.offset(), static_cast<std::size_t>(length)));
    PackedLayer l;
    try {
      l = read_layer(body, static_cast<PackedKind>(kind));
    } catch (const FormatError& e) {
      throw FormatError(e.detail(), r.offset() + e.offset());
    }
    if (body.remaining() != 0) {
      throw FormatError("trailing bytes inside record", r.offset() + body.offset());
    }
    check_layer(l, at);
    if (l.in_shape != cur) throw FormatError("record input shape does not chain", at);
    cur = l.out_shape;
    m.layers.push_back(std::move(l));
    for (std::uint64_t skip = 0; skip < length; ++skip) (void)r.u8("record");
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after last record", r.offset());
  if (m.layers.back().kind != PackedKind::Head) {
    throw FormatError("last record is not a head", bytes.size());
  }
  return m;
}

void save_packed(const PackedModel& model, const std::filesystem::path& path) {
  const auto bytes = serialize_packed(model);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed: " + path.string());
}

PackedModel load_packed(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  return deserialize_packed(bytes);
}

PackedActivations packed_fc(const PackedActivations& a, const PackedLayer& l) {
  if (a.size() != l.row_bits) {
    throw DimensionError("packed fc expects " + std::to_string(l.row_bits) + " inputs, got " +
                         std::to_string(a.size()));
  }
  const std::size_t wpr = l.words_per_row();
  const std::size_t out = l.out_channels();
  PackedActivations r = PackedActivations::zeros(l.out_shape);
  for (std::size_t o = 0; o < out; ++o) {
    const std::int64_t s = signed_dot(l.weight_bits.data() + o * wpr, a.bits.data(), wpr);
    if (threshold_fires(s, l.thresholds[o], l.signs[o])) r.set(o);
  }
  return r;
}

PackedActivations packed_conv(const PackedActivations& a, const PackedLayer& l) {
  const std::size_t c = l.in_shape[0], h = l.in_shape[1], w = l.in_shape[2];
  const std::size_t kh = l.kernel_h, kw = l.kernel_w, stride = l.stride, pad = l.pad;
  const std::size_t oc = l.out_shape[0], oh = l.out_shape[1], ow = l.out_shape[2];
  const std::size_t wpr = l.words_per_row();
  const std::size_t positions = oh * ow;
  // Bit-level im2col: one padded row of c*kh*kw bits per output position.
  std::vector<std::uint64_t> cols(positions * wpr, 0);
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      std::uint64_t* row = cols.data() + (oy * ow + ox) * wpr;
      std::size_t j = 0;
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t ky = 0; ky < kh; ++ky) {
          const std::size_t iy = oy * stride + ky;
          for (std::size_t kx = 0; kx < kw; ++kx, ++j) {
            const std::size_t ix = ox * stride + kx;
            if (iy < pad || ix < pad || iy - pad >= h || ix - pad >= w) continue;
            if (a.get(ch * h * w + (iy - pad) * w + (ix - pad)))
              row[j / kWordBits] |= std::uint64_t{1} << (j % kWordBits);
          }
        }
      }
    }
  }
  PackedActivations r = PackedActivations::zeros(l.out_shape);
  for (std::size_t o = 0; o < oc; ++o) {
    const std::uint64_t* wrow = l.weight_bits.data() + o * wpr;
    for (std::size_t p = 0; p < positions; ++p) {
      const std::int64_t s = signed_dot(wrow, cols.data() + p * wpr, wpr);
      if (threshold_fires(s, l.thresholds[o], l.signs[o])) r.set(o * positions + p);
    }
  }
  return r;
}

PackedActivations packed_pool(const PackedActivations& a, const PackedLayer& l) {
  const std::size_t c = l.in_shape[0], h = l.in_shape[1], w = l.in_shape[2];
  const std::size_t oh = l.out_shape[1], ow = l.out_shape[2];
  const std::size_t win = l.kernel_h, stride = l.stride;
  PackedActivations r = PackedActivations::zeros(l.out_shape);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        bool any = false;
        for (std::size_t i = 0; i < win && !any; ++i)
          for (std::size_t j = 0; j < win && !any; ++j)
            any = a.get(ch * h * w + (oy * stride + i) * w + ox * stride + j);
        if (any) r.set((ch * oh + oy) * ow + ox);
      }
    }
  }
  return r;
}

std::vector<double> packed_head(const PackedActivations& a, const PackedLayer& l) {
  if (a.size() != l.row_bits) {
    throw DimensionError("packed head expects " + std::to_string(l.row_bits) + " inputs, got " +
                         std::to_string(a.size()));
  }
  const std::size_t wpr = l.words_per_row();
  std::vector<double> scores(l.out_channels());
  for (std::size_t o = 0; o < scores.size(); ++o) {
    const std::int64_t s = signed_dot(l.weight_bits.data() + o * wpr, a.bits.data(), wpr);
    scores[o] = static_cast<double>(s) + l.bias[o];
  }
  return scores;
}

std::vector<LayerTiming> make_timing(const PackedModel& model) {
  std::vector<LayerTiming> t;
  for (const auto& l : model.layers) t.push_back({packed_kind_name(l.kind), 0.0, 0});
  return t;
}

std::vector<double> packed_forward(const PackedModel& model, std::span<const double> image,
                                   std::vector<LayerTiming>* timing) {
  if (image.size() != shape_size(model.input_shape)) {
    throw DimensionError("packed model expects " + std::to_string(shape_size(model.input_shape)) +
                         " input values, got " + std::to_string(image.size()));
  }
  if (timing && timing->size() != model.layers.size()) {
    throw DimensionError("timing table does not match the model");
  }
  Shape real_shape = model.input_shape;
  PackedActivations bits;
  for (std::size_t n = 0; n < model.layers.size(); ++n) {
    const PackedLayer& l = model.layers[n];
    const auto t0 = std::chrono::steady_clock::now();
    switch (l.kind) {
      case PackedKind::RealConv: {
        Shape s{1};
        s.insert(s.end(), real_shape.begin(), real_shape.end());
        const Tensor x(std::move(s), std::vector<double>(image.begin(), image.end()));
        bits = step_real(kernels::conv2d_forward(x, l.real_weight, l.real_bias,
                                                 kernels::ConvGeometry{l.stride, l.pad}),
                         l);
        break;
      }
      case PackedKind::RealFc: {
        const Tensor x(Shape{1, image.size()}, std::vector<double>(image.begin(), image.end()));
        bits = step_real(kernels::fc_forward(x, l.real_weight, l.real_bias), l);
        break;
      }
      case PackedKind::BinaryConv: bits = packed_conv(bits, l); break;
      case PackedKind::BinaryFc: bits = packed_fc(bits, l); break;
      case PackedKind::MaxPool: bits = packed_pool(bits, l); break;
      case PackedKind::Flatten:
        if (bits.shape.empty()) {
          real_shape = l.out_shape;
        } else {
          bits.shape = l.out_shape;
        }
        break;
      case PackedKind::Head: {
        auto scores = packed_head(bits, l);
        if (timing) {
          (*timing)[n].seconds += elapsed(t0);
          ++(*timing)[n].calls;
        }
        return scores;
      }
    }
    if (timing) {
      (*timing)[n].seconds += elapsed(t0);
      ++(*timing)[n].calls;
    }
  }
  throw StateError("packed model has no head");
}

Tensor packed_forward_batch(const PackedModel& model, const Tensor& images,
                            std::vector<LayerTiming>* timing) {
  const std::size_t n = images.dim(0);
  const std::size_t per = images.size() / n;
  const std::size_t classes = model.num_classes();
  Tensor out(Shape{n, classes});
  for (std::size_t i = 0; i < n; ++i) {
    const auto s = packed_forward(model, std::span(images.data() + i * per, per), timing);
    std::copy(s.begin(), s.end(), out.data() + i * classes);
  }
  return out;
}

}  // namespace binrep

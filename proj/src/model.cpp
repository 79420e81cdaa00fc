#include "p2b/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "p2b/error.hpp"
#include "p2b/rng.hpp"

namespace p2b {
namespace {

constexpr char kMagic[8] = {'P', '2', 'B', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kVersion = 1;

void check_features(const Matrix& x, const ModelParams& p) {
  if (x.rows < 1) {
    throw ValidationError("model forward: empty feature matrix");
  }
  if (x.cols != p.feature_dim()) {
    throw ValidationError("model forward: feature dim " +
                          std::to_string(x.cols) + " != model dim " +
                          std::to_string(p.feature_dim()));
  }
  for (double v : x.data) {
    if (!std::isfinite(v)) {
      throw ValidationError("model forward: non-finite feature value");
    }
  }
}

void check_head(int head, const ModelParams& p) {
  if (head < 0 || head >= p.heads()) {
    throw ValidationError("model forward: head index out of range");
  }
}

// out = x * W + b (b broadcast over rows), out sized by caller's dims.
Matrix affine(const Matrix& x, const double* w, const double* b, int out_dim) {
  Matrix out(x.rows, out_dim);
  gemm_nn(x.data.data(), w, out.data.data(), x.rows, x.cols, out_dim, false);
  for (int r = 0; r < out.rows; ++r) {
    double* row = out.row(r);
    for (int c = 0; c < out_dim; ++c) {
      row[c] += b[c];
    }
  }
  return out;
}

void tanh_inplace(Matrix& m) {
  for (double& v : m.data) {
    v = std::tanh(v);
  }
}

// a1 = tanh(x W1 + b1), a2 = tanh(a1 W2 + b2)
void trunk_forward(const Matrix& x, const ModelParams& p, Matrix& a1,
                   Matrix& a2) {
  a1 = affine(x, p.w1(), p.b1(), p.hidden_dim());
  tanh_inplace(a1);
  a2 = affine(a1, p.w2(), p.b2(), p.hidden_dim());
  tanh_inplace(a2);
}

Matrix row_softmax(const Matrix& o) {
  Matrix s(o.rows, o.cols);
  for (int r = 0; r < o.rows; ++r) {
    const double* in = o.row(r);
    double* out = s.row(r);
    const double mx = *std::max_element(in, in + o.cols);
    double sum = 0.0;
    for (int c = 0; c < o.cols; ++c) {
      out[c] = std::exp(in[c] - mx);
      sum += out[c];
    }
    for (int c = 0; c < o.cols; ++c) {
      out[c] /= sum;
    }
  }
  return s;
}

Matrix col_softmax(const Matrix& o) {
  Matrix s(o.rows, o.cols);
  for (int c = 0; c < o.cols; ++c) {
    double mx = o(0, c);
    for (int r = 1; r < o.rows; ++r) {
      mx = std::max(mx, o(r, c));
    }
    double sum = 0.0;
    for (int r = 0; r < o.rows; ++r) {
      s(r, c) = std::exp(o(r, c) - mx);
      sum += s(r, c);
    }
    for (int r = 0; r < o.rows; ++r) {
      s(r, c) /= sum;
    }
  }
  return s;
}

Matrix sigmoid(const Matrix& o) {
  Matrix s(o.rows, o.cols);
  for (std::size_t i = 0; i < o.data.size(); ++i) {
    const double v = o.data[i];
    // Branch on sign so exp never overflows.
    s.data[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                         : std::exp(v) / (1.0 + std::exp(v));
  }
  return s;
}

// Shared tail of both bag forwards: instance softmax, Hadamard, bag score.
void finish_bundle(ScoreBundle& f) {
  f.s_ins = col_softmax(f.o_ins);
  f.s = Matrix(f.s_cls.rows, f.s_cls.cols);
  for (std::size_t i = 0; i < f.s.data.size(); ++i) {
    f.s.data[i] = f.s_cls.data[i] * f.s_ins.data[i];
  }
  f.bag_score.assign(f.s.cols, 0.0);
  for (int r = 0; r < f.s.rows; ++r) {
    const double* row = f.s.row(r);
    for (int c = 0; c < f.s.cols; ++c) {
      f.bag_score[c] += row[c];
    }
  }
}

// d(row-softmax): dO[r][i] = s[r][i] * (dS[r][i] - sum_k dS[r][k] s[r][k]).
Matrix row_softmax_backward(const Matrix& s, const Matrix& ds) {
  Matrix d(s.rows, s.cols);
  for (int r = 0; r < s.rows; ++r) {
    double dot = 0.0;
    for (int c = 0; c < s.cols; ++c) {
      dot += ds(r, c) * s(r, c);
    }
    for (int c = 0; c < s.cols; ++c) {
      d(r, c) = s(r, c) * (ds(r, c) - dot);
    }
  }
  return d;
}

// Column-wise analogue for the instance stream.
Matrix col_softmax_backward(const Matrix& s, const Matrix& ds) {
  Matrix d(s.rows, s.cols);
  for (int c = 0; c < s.cols; ++c) {
    double dot = 0.0;
    for (int r = 0; r < s.rows; ++r) {
      dot += ds(r, c) * s(r, c);
    }
    for (int r = 0; r < s.rows; ++r) {
      d(r, c) = s(r, c) * (ds(r, c) - dot);
    }
  }
  return d;
}

Matrix sigmoid_backward(const Matrix& s, const Matrix& ds) {
  Matrix d(s.rows, s.cols);
  for (std::size_t i = 0; i < s.data.size(); ++i) {
    d.data[i] = ds.data[i] * s.data[i] * (1.0 - s.data[i]);
  }
  return d;
}

// Head gradients plus the head's contribution to d(trunk output).
void head_backward(const Matrix& a2, const Matrix& d_logits, const double* w,
                   double* g_w, double* g_b, Matrix& d_a2, int dh, int k) {
  gemm_tn(a2.data.data(), d_logits.data.data(), g_w, dh, a2.rows, k, true);
  for (int r = 0; r < d_logits.rows; ++r) {
    const double* row = d_logits.row(r);
    for (int c = 0; c < k; ++c) {
      g_b[c] += row[c];
    }
  }
  gemm_nt(d_logits.data.data(), w, d_a2.data.data(), d_logits.rows, k, dh,
          true);
}

// Backward through tanh trunk; features are leaves, so no dX is produced.
void trunk_backward(const Matrix& x, const Matrix& a1, const Matrix& a2,
                    const Matrix& d_a2, ModelParams& p) {
  const int dh = p.hidden_dim();
  Matrix dz2(a2.rows, dh);
  for (std::size_t i = 0; i < dz2.data.size(); ++i) {
    dz2.data[i] = d_a2.data[i] * (1.0 - a2.data[i] * a2.data[i]);
  }
  gemm_tn(a1.data.data(), dz2.data.data(), p.g_w2(), dh, a1.rows, dh, true);
  for (int r = 0; r < dz2.rows; ++r) {
    const double* row = dz2.row(r);
    for (int c = 0; c < dh; ++c) {
      p.g_b2()[c] += row[c];
    }
  }
  Matrix da1(a1.rows, dh);
  gemm_nt(dz2.data.data(), p.w2(), da1.data.data(), dz2.rows, dh, dh, false);

  Matrix dz1(a1.rows, dh);
  for (std::size_t i = 0; i < dz1.data.size(); ++i) {
    dz1.data[i] = da1.data[i] * (1.0 - a1.data[i] * a1.data[i]);
  }
  gemm_tn(x.data.data(), dz1.data.data(), p.g_w1(), p.feature_dim(), x.rows,
          dh, true);
  for (int r = 0; r < dz1.rows; ++r) {
    const double* row = dz1.row(r);
    for (int c = 0; c < dh; ++c) {
      p.g_b1()[c] += row[c];
    }
  }
}

}  // namespace

ModelParams::ModelParams(int feature_dim, int hidden_dim, int categories,
                         int heads)
    : d_(feature_dim), dh_(hidden_dim), k_(categories), heads_(heads) {
  if (d_ < 1 || dh_ < 1 || k_ < 1 || heads_ < 1) {
    throw ValidationError("model params: all dimensions must be >= 1");
  }
  std::size_t off = 0;
  const auto claim = [&off](std::size_t n) {
    const std::size_t at = off;
    off += n;
    return at;
  };
  off_w1_ = claim(static_cast<std::size_t>(d_) * dh_);
  off_b1_ = claim(dh_);
  off_w2_ = claim(static_cast<std::size_t>(dh_) * dh_);
  off_b2_ = claim(dh_);
  head_offsets_.resize(heads_);
  for (int h = 0; h < heads_; ++h) {
    head_offsets_[h] = {claim(static_cast<std::size_t>(dh_) * k_), claim(k_),
                        claim(static_cast<std::size_t>(dh_) * k_), claim(k_)};
  }
  values.assign(off, 0.0);
  grads.assign(off, 0.0);
}

ModelParams::ModelParams(int feature_dim, int hidden_dim, int categories,
                         int heads, std::uint64_t seed)
    : ModelParams(feature_dim, hidden_dim, categories, heads) {
  Rng rng(seed);
  const auto fill = [&rng](double* w, std::size_t n, int fan_in) {
    const double a = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (std::size_t i = 0; i < n; ++i) {
      w[i] = rng.uniform(-a, a);
    }
  };
  fill(w1(), static_cast<std::size_t>(d_) * dh_, d_);
  fill(w2(), static_cast<std::size_t>(dh_) * dh_, dh_);
  for (int h = 0; h < heads_; ++h) {
    fill(cls_w(h), static_cast<std::size_t>(dh_) * k_, dh_);
    fill(ins_w(h), static_cast<std::size_t>(dh_) * k_, dh_);
  }
}

const std::array<std::size_t, 4>& ModelParams::head_off(int head) const {
  if (head < 0 || head >= heads_) {
    throw ValidationError("model params: head index out of range");
  }
  return head_offsets_[static_cast<std::size_t>(head)];
}

void ModelParams::zero_grads() {
  std::fill(grads.begin(), grads.end(), 0.0);
}

ScoreBundle forward_cbp(const Matrix& features, const ModelParams& params,
                        int head) {
  check_features(features, params);
  check_head(head, params);
  ScoreBundle f;
  f.head = head;
  f.sigmoid_cls = false;
  f.x = features;
  trunk_forward(f.x, params, f.a1, f.a2);
  f.o_cls = affine(f.a2, params.cls_w(head), params.cls_b(head),
                   params.categories());
  f.o_ins = affine(f.a2, params.ins_w(head), params.ins_b(head),
                   params.categories());
  f.s_cls = row_softmax(f.o_cls);
  finish_bundle(f);
  return f;
}

ScoreBundle forward_pbr(const Matrix& features, const ModelParams& params,
                        int head, const std::vector<double>& prev_bag_score) {
  check_features(features, params);
  check_head(head, params);
  if (static_cast<int>(prev_bag_score.size()) != params.categories()) {
    throw ValidationError(
        "refinement forward: previous bag score must have K entries");
  }
  ScoreBundle f;
  f.head = head;
  f.sigmoid_cls = true;
  f.prev_bag_score = prev_bag_score;
  f.x = features;
  trunk_forward(f.x, params, f.a1, f.a2);
  f.o_cls = affine(f.a2, params.cls_w(head), params.cls_b(head),
                   params.categories());
  f.o_ins = affine(f.a2, params.ins_w(head), params.ins_b(head),
                   params.categories());
  f.s_cls = sigmoid(f.o_cls);
  finish_bundle(f);
  return f;
}

NegScores score_negatives(const Matrix& features, const ModelParams& params,
                          int head) {
  check_features(features, params);
  check_head(head, params);
  NegScores f;
  f.head = head;
  f.x = features;
  trunk_forward(f.x, params, f.a1, f.a2);
  f.o_cls = affine(f.a2, params.cls_w(head), params.cls_b(head),
                   params.categories());
  f.s_cls = sigmoid(f.o_cls);
  return f;
}

void backward_bag(const ScoreBundle& f, const std::vector<double>& d_bag,
                  ModelParams& params) {
  const int k = params.categories();
  const int dh = params.hidden_dim();
  if (static_cast<int>(d_bag.size()) != k) {
    throw ValidationError("backward_bag: gradient must have K entries");
  }
  // bag_score[k] = sum_u s[u][k], so dS[u][k] = d_bag[k]; split over the
  // Hadamard product.
  Matrix d_s_cls(f.s.rows, k);
  Matrix d_s_ins(f.s.rows, k);
  for (int r = 0; r < f.s.rows; ++r) {
    for (int c = 0; c < k; ++c) {
      d_s_cls(r, c) = d_bag[c] * f.s_ins(r, c);
      d_s_ins(r, c) = d_bag[c] * f.s_cls(r, c);
    }
  }
  const Matrix d_o_cls = f.sigmoid_cls
                             ? sigmoid_backward(f.s_cls, d_s_cls)
                             : row_softmax_backward(f.s_cls, d_s_cls);
  const Matrix d_o_ins = col_softmax_backward(f.s_ins, d_s_ins);

  Matrix d_a2(f.a2.rows, dh);
  head_backward(f.a2, d_o_cls, params.cls_w(f.head), params.g_cls_w(f.head),
                params.g_cls_b(f.head), d_a2, dh, k);
  head_backward(f.a2, d_o_ins, params.ins_w(f.head), params.g_ins_w(f.head),
                params.g_ins_b(f.head), d_a2, dh, k);
  trunk_backward(f.x, f.a1, f.a2, d_a2, params);
}

void backward_negatives(const NegScores& f, const Matrix& d_s_cls,
                        ModelParams& params) {
  const int k = params.categories();
  const int dh = params.hidden_dim();
  if (d_s_cls.rows != f.s_cls.rows || d_s_cls.cols != k) {
    throw ValidationError("backward_negatives: gradient shape mismatch");
  }
  const Matrix d_o_cls = sigmoid_backward(f.s_cls, d_s_cls);
  Matrix d_a2(f.a2.rows, dh);
  head_backward(f.a2, d_o_cls, params.cls_w(f.head), params.g_cls_w(f.head),
                params.g_cls_b(f.head), d_a2, dh, k);
  trunk_backward(f.x, f.a1, f.a2, d_a2, params);
}

void save_checkpoint(const ModelParams& params, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError("cannot open checkpoint for writing: " + path);
  }
  out.write(kMagic, sizeof(kMagic));
  const auto write_u32 = [&out](std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
  };
  write_u32(kVersion);
  write_u32(static_cast<std::uint32_t>(params.feature_dim()));
  write_u32(static_cast<std::uint32_t>(params.hidden_dim()));
  write_u32(static_cast<std::uint32_t>(params.categories()));
  write_u32(static_cast<std::uint32_t>(params.heads()));
  const std::uint64_t n = params.values.size();
  out.write(reinterpret_cast<const char*>(&n), sizeof(n));
  out.write(reinterpret_cast<const char*>(params.values.data()),
            static_cast<std::streamsize>(n * sizeof(double)));
  if (!out) {
    throw IoError("failed writing checkpoint: " + path);
  }
}

ModelParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open checkpoint: " + path);
  }
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw ParseError("checkpoint " + path + ": bad magic");
  }
  const auto read_u32 = [&in, &path]() {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!in) {
      throw ParseError("checkpoint " + path + ": truncated header");
    }
    return v;
  };
  const std::uint32_t version = read_u32();
  if (version != kVersion) {
    throw ParseError("checkpoint " + path + ": unsupported version " +
                     std::to_string(version));
  }
  const int d = static_cast<int>(read_u32());
  const int dh = static_cast<int>(read_u32());
  const int k = static_cast<int>(read_u32());
  const int heads = static_cast<int>(read_u32());
  std::uint64_t n = 0;
  in.read(reinterpret_cast<char*>(&n), sizeof(n));
  if (!in) {
    throw ParseError("checkpoint " + path + ": truncated header");
  }
  ModelParams params(d, dh, k, heads);
  if (n != params.values.size()) {
    throw ParseError("checkpoint " + path + ": parameter count mismatch");
  }
  in.read(reinterpret_cast<char*>(params.values.data()),
          static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) {
    throw ParseError("checkpoint " + path + ": truncated parameter data");
  }
  return params;
}

}  // namespace p2b

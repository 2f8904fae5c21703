#include "fedsc/nn.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "fedsc/errors.hpp"

namespace fedsc {

namespace {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Input columns in processing order for one direction.
Matrix ordered_inputs(const Matrix& e, int len, bool reverse) {
  if (!reverse) return e.leftCols(len);
  return e.leftCols(len).rowwise().reverse();
}

void gru_run(const Matrix& xo, const GruRef& g, GruTrace& tr) {
  const Eigen::Index s = g.U->cols();
  const Eigen::Index len = xo.cols();
  tr.wx.noalias() = (*g.W) * xo;
  tr.wx.colwise() += g.b->col(0);
  tr.gates.resize(3 * s, len);
  tr.h.setZero(s, len + 1);
  Vector zr(2 * s);
  Vector rh(s);
  for (Eigen::Index t = 0; t < len; ++t) {
    const auto h = tr.h.col(t);
    zr.noalias() = g.U->topRows(2 * s) * h;
    zr += tr.wx.col(t).head(2 * s);
    zr = zr.unaryExpr([](double v) { return sigmoid(v); });
    rh = zr.tail(s).cwiseProduct(h);
    auto n = tr.gates.col(t).tail(s);
    n.noalias() = g.U->bottomRows(s) * rh;
    n += tr.wx.col(t).tail(s);
    n = n.array().tanh().matrix();
    tr.gates.col(t).head(2 * s) = zr;
    const auto z = zr.head(s).array();
    tr.h.col(t + 1) = ((1.0 - z) * h.array() + z * n.array()).matrix();
  }
}

/// dout is s x len in processing order. Returns dx in processing order.
Matrix gru_backprop(const Matrix& xo, const GruTrace& tr, const Matrix& dout, const GruRef& g,
                    const GruGradRef& dg) {
  const Eigen::Index s = g.U->cols();
  const Eigen::Index len = xo.cols();
  Matrix da(3 * s, len);
  Vector dh = Vector::Zero(s);
  Vector dhp(s), drh(s);
  for (Eigen::Index t = len - 1; t >= 0; --t) {
    dh += dout.col(t);
    const auto z = tr.gates.col(t).head(s).array();
    const auto r = tr.gates.col(t).segment(s, s).array();
    const auto n = tr.gates.col(t).tail(s).array();
    const auto hp = tr.h.col(t).array();
    const auto dha = dh.array();

    auto da_z = da.col(t).head(s);
    auto da_r = da.col(t).segment(s, s);
    auto da_n = da.col(t).tail(s);
    da_n = (dha * z * (1.0 - n * n)).matrix();
    da_z = (dha * (n - hp) * z * (1.0 - z)).matrix();
    drh.noalias() = g.U->bottomRows(s).transpose() * da_n;
    da_r = (drh.array() * hp * r * (1.0 - r)).matrix();

    dhp = (dha * (1.0 - z) + drh.array() * r).matrix();
    dhp.noalias() += g.U->topRows(2 * s).transpose() * da.col(t).head(2 * s);
    dh = dhp;
  }
  const auto hprev = tr.h.leftCols(len);
  const Matrix rh = tr.gates.middleRows(s, s).cwiseProduct(hprev);
  dg.W->noalias() += da * xo.transpose();
  *dg.b += da.rowwise().sum();
  dg.U->topRows(2 * s).noalias() += da.topRows(2 * s) * hprev.transpose();
  dg.U->bottomRows(s).noalias() += da.bottomRows(s) * rh.transpose();
  return g.W->transpose() * da;
}

}  // namespace

Matrix embed(const EncodedReview& x, const Matrix& table) {
  Matrix e(table.cols(), static_cast<Eigen::Index>(x.indices.size()));
  for (std::size_t j = 0; j < x.indices.size(); ++j) {
    const int idx = x.indices[j];
    if (idx < 0 || idx >= table.rows())
      throw ShapeError("token index " + std::to_string(idx) + " outside embedding table");
    e.col(static_cast<Eigen::Index>(j)) = table.row(idx).transpose();
  }
  return e;
}

Matrix birnn_forward(const Matrix& e, const GruRef& fwd, const GruRef& bwd, int true_length,
                     BirnnTrace* trace) {
  if (true_length < 1 || true_length > e.cols())
    throw ShapeError("birnn_forward: true_length out of range");
  if (fwd.W->cols() != e.rows() || bwd.W->cols() != e.rows())
    throw ShapeError("birnn_forward: input width does not match W");
  BirnnTrace local;
  BirnnTrace& tr = trace ? *trace : local;
  tr.length = true_length;
  gru_run(ordered_inputs(e, true_length, false), fwd, tr.fwd);
  gru_run(ordered_inputs(e, true_length, true), bwd, tr.bwd);

  const Eigen::Index s = fwd.U->cols();
  Matrix h = Matrix::Zero(2 * s, e.cols());
  h.topLeftCorner(s, true_length) = tr.fwd.h.rightCols(true_length);
  h.bottomLeftCorner(s, true_length) = tr.bwd.h.rightCols(true_length).rowwise().reverse();
  return h;
}

void birnn_backward(const Matrix& e, const BirnnTrace& trace, const Matrix& dh, const GruRef& fwd,
                    const GruRef& bwd, const GruGradRef& dfwd, const GruGradRef& dbwd, Matrix& de) {
  const int len = trace.length;
  const Eigen::Index s = fwd.U->cols();
  de.setZero(e.rows(), e.cols());

  const Matrix dx_f = gru_backprop(ordered_inputs(e, len, false), trace.fwd,
                                   dh.topLeftCorner(s, len), fwd, dfwd);
  de.leftCols(len) += dx_f;

  const Matrix dout_b = dh.bottomLeftCorner(s, len).rowwise().reverse();
  const Matrix dx_b = gru_backprop(ordered_inputs(e, len, true), trace.bwd, dout_b, bwd, dbwd);
  de.leftCols(len) += dx_b.rowwise().reverse();
}

Vector seq_mean(const Matrix& h, int true_length) {
  if (true_length < 1 || true_length > h.cols()) throw ShapeError("seq_mean: bad true_length");
  return h.leftCols(true_length).rowwise().sum() / static_cast<double>(true_length);
}

Vector project(const Vector& o, const Matrix& W, const Matrix& b) {
  Vector out = b.col(0);
  out.noalias() += W * o;
  return out;
}

Vector classify(const Vector& o, const Matrix& W1, const Matrix& b1, const Matrix& W2,
                const Matrix& b2, ClassifierTrace* trace) {
  Vector pre = b1.col(0);
  pre.noalias() += W1 * o;
  Vector hidden = pre.cwiseMax(0.0);
  Vector g = b2.col(0);
  g.noalias() += W2 * hidden;
  if (trace) {
    trace->pre = std::move(pre);
    trace->hidden = std::move(hidden);
  }
  return g;
}

Vector softmax_t(const Vector& g, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("softmax temperature must be > 0");
  Vector z = g / temperature;
  z.array() -= z.maxCoeff();
  z = z.array().exp().matrix();
  return z / z.sum();
}

// ---------------------------------------------------------------------------

std::vector<std::string> component_tensor_names(Component c) {
  const std::string base(component_name(c));
  switch (c) {
    case Component::embedding:
    case Component::embedding_p:
      return {base};
    case Component::rnn:
    case Component::rnn_p:
      return {base + ".fwd.W", base + ".fwd.U", base + ".fwd.b",
              base + ".bwd.W", base + ".bwd.U", base + ".bwd.b"};
    case Component::projection_s:
    case Component::projection_p:
      return {base + ".W", base + ".b"};
    case Component::classifier_s:
    case Component::classifier_p:
      return {base + ".W1", base + ".b1", base + ".W2", base + ".b2"};
  }
  return {};
}

struct Network::Bound {
  template <typename P, typename M>
  static M* find(P& params, const std::string& name) {
    const int i = params.index_of(name);
    return i < 0 ? nullptr : &params.at(static_cast<std::size_t>(i)).value;
  }

  template <typename P, typename M>
  struct Gru {
    M* W = nullptr;
    M* U = nullptr;
    M* b = nullptr;
  };
  template <typename P, typename M>
  struct Cls {
    M* W1 = nullptr;
    M* b1 = nullptr;
    M* W2 = nullptr;
    M* b2 = nullptr;
  };
  template <typename P, typename M>
  struct Set {
    M* embedding = nullptr;
    M* embedding_p = nullptr;
    Gru<P, M> rnn_f, rnn_b, rnn_p_f, rnn_p_b;
    M* proj_s_W = nullptr;
    M* proj_s_b = nullptr;
    M* proj_p_W = nullptr;
    M* proj_p_b = nullptr;
    Cls<P, M> cls_s, cls_p;
  };

  template <typename P, typename M = std::conditional_t<std::is_const_v<P>, const Matrix, Matrix>>
  static Set<P, M> bind(P& params) {
    Set<P, M> b;
    auto f = [&](const std::string& n) { return find<P, M>(params, n); };
    b.embedding = f("embedding");
    b.embedding_p = f("embedding_p");
    b.rnn_f = {f("rnn.fwd.W"), f("rnn.fwd.U"), f("rnn.fwd.b")};
    b.rnn_b = {f("rnn.bwd.W"), f("rnn.bwd.U"), f("rnn.bwd.b")};
    b.rnn_p_f = {f("rnn_p.fwd.W"), f("rnn_p.fwd.U"), f("rnn_p.fwd.b")};
    b.rnn_p_b = {f("rnn_p.bwd.W"), f("rnn_p.bwd.U"), f("rnn_p.bwd.b")};
    b.proj_s_W = f("projection_s.W");
    b.proj_s_b = f("projection_s.b");
    b.proj_p_W = f("projection_p.W");
    b.proj_p_b = f("projection_p.b");
    b.cls_s = {f("classifier_s.W1"), f("classifier_s.b1"), f("classifier_s.W2"), f("classifier_s.b2")};
    b.cls_p = {f("classifier_p.W1"), f("classifier_p.b1"), f("classifier_p.W2"), f("classifier_p.b2")};
    return b;
  }

  static void require(const void* p, const char* what) {
    if (!p) throw ShapeError(std::string("parameter set lacks ") + what);
  }
};

Network::Network(ModelDims dims, SharingConfig sharing) : dims_(dims), sharing_(sharing) {
  dims_.validate();
  sharing_.validate();
}

ParamSet Network::init_params(Rng& rng, const InitOptions& opts) const {
  const Eigen::Index V = dims_.vocab, d = dims_.embed, s = dims_.hidden, f = dims_.feature(),
                     m = dims_.mlp, C = dims_.classes;
  auto uniform = [&](Eigen::Index r, Eigen::Index c) {
    Matrix out(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
      for (Eigen::Index j = 0; j < c; ++j) out(i, j) = opts.scale * (2.0 * uniform01(rng) - 1.0);
    return out;
  };
  ParamSet p;
  for (std::size_t ci = 0; ci < kComponentCount; ++ci) {
    const auto c = static_cast<Component>(ci);
    if (!sharing_.present(c)) continue;
    const auto names = component_tensor_names(c);
    switch (c) {
      case Component::embedding:
      case Component::embedding_p:
        p.add(names[0], c, uniform(V, d));
        break;
      case Component::rnn:
      case Component::rnn_p:
        for (int dir = 0; dir < 2; ++dir) {
          p.add(names[3 * dir + 0], c, uniform(3 * s, d));
          p.add(names[3 * dir + 1], c, uniform(3 * s, s));
          p.add(names[3 * dir + 2], c, Matrix::Zero(3 * s, 1));
        }
        break;
      case Component::projection_s:
      case Component::projection_p:
        p.add(names[0], c, uniform(f, f));
        p.add(names[1], c, Matrix::Zero(f, 1));
        break;
      case Component::classifier_s:
      case Component::classifier_p:
        p.add(names[0], c, uniform(m, f));
        p.add(names[1], c, Matrix::Zero(m, 1));
        p.add(names[2], c, uniform(C, m));
        p.add(names[3], c, Matrix::Zero(C, 1));
        break;
    }
  }
  return p;
}

void Network::forward(const ParamSet& params, const EncodedReview& x, SampleTrace& tr,
                      bool with_p) const {
  const auto w = Bound::bind(params);
  Bound::require(w.embedding, "embedding");
  Bound::require(w.rnn_f.W, "rnn");
  Bound::require(w.cls_s.W1, "classifier_s");
  const int len = x.true_length;

  tr.emb_s = embed(x, *w.embedding);
  const Matrix h = birnn_forward(tr.emb_s, {w.rnn_f.W, w.rnn_f.U, w.rnn_f.b},
                                 {w.rnn_b.W, w.rnn_b.U, w.rnn_b.b}, len, &tr.enc_s);
  tr.s.input = seq_mean(h, len);
  if (sharing_.present(Component::projection_s)) {
    Bound::require(w.proj_s_W, "projection_s");
    tr.s.feature = project(tr.s.input, *w.proj_s_W, *w.proj_s_b);
  } else {
    tr.s.feature = tr.s.input;
  }
  tr.s.logits = classify(tr.s.feature, *w.cls_s.W1, *w.cls_s.b1, *w.cls_s.W2, *w.cls_s.b2, &tr.s.cls);

  tr.has_p = with_p && sharing_.has_p_branch();
  if (!tr.has_p) return;
  Bound::require(w.cls_p.W1, "classifier_p");
  if (sharing_.present(Component::rnn_p)) {
    Bound::require(w.rnn_p_f.W, "rnn_p");
    const Matrix* table = sharing_.present(Component::embedding_p) ? w.embedding_p : w.embedding;
    Bound::require(table, "embedding_p");
    tr.emb_p = embed(x, *table);
    const Matrix hp = birnn_forward(tr.emb_p, {w.rnn_p_f.W, w.rnn_p_f.U, w.rnn_p_f.b},
                                    {w.rnn_p_b.W, w.rnn_p_b.U, w.rnn_p_b.b}, len, &tr.enc_p);
    tr.p.input = seq_mean(hp, len);
  } else {
    tr.p.input = tr.s.input;
  }
  if (sharing_.present(Component::projection_p)) {
    Bound::require(w.proj_p_W, "projection_p");
    tr.p.feature = project(tr.p.input, *w.proj_p_W, *w.proj_p_b);
  } else {
    tr.p.feature = tr.p.input;
  }
  tr.p.logits = classify(tr.p.feature, *w.cls_p.W1, *w.cls_p.b1, *w.cls_p.W2, *w.cls_p.b2, &tr.p.cls);
}

namespace {

template <typename W, typename G>
Vector branch_backward(const BranchTrace& tr, const Vector& dlogits, const Vector& dfeature_extra,
                       const W& cls, Matrix* projW, Matrix* projb, const Matrix* projW_val,
                       const G& dcls) {
  // classifier
  *dcls.W2 += dlogits * tr.cls.hidden.transpose();
  *dcls.b2 += dlogits;
  Vector dpre = cls.W2->transpose() * dlogits;
  for (Eigen::Index i = 0; i < dpre.size(); ++i)
    if (tr.cls.pre(i) <= 0.0) dpre(i) = 0.0;
  *dcls.W1 += dpre * tr.feature.transpose();
  *dcls.b1 += dpre;
  Vector dfeature = cls.W1->transpose() * dpre;
  if (dfeature_extra.size() > 0) dfeature += dfeature_extra;
  if (!projW_val) return dfeature;
  *projW += dfeature * tr.input.transpose();
  *projb += dfeature;
  return projW_val->transpose() * dfeature;
}

}  // namespace

void Network::backward(const ParamSet& params, const EncodedReview& x, const SampleTrace& tr,
                       const BranchGrads& g, ParamSet& grads) const {
  const auto w = Bound::bind(params);
  auto dw = Bound::bind(grads);
  const int len = x.true_length;

  const bool proj_s = sharing_.present(Component::projection_s);
  Vector do_s = branch_backward(tr.s, g.logits_s, g.feature_s, w.cls_s, dw.proj_s_W, dw.proj_s_b,
                                proj_s ? w.proj_s_W : nullptr, dw.cls_s);

  auto encoder_backward = [&](const Matrix& emb, const BirnnTrace& enc, const Vector& dout,
                              const auto& rf, const auto& rb, auto& df, auto& db, Matrix* dtable) {
    Matrix dh = Matrix::Zero(2 * dims_.hidden, emb.cols());
    dh.leftCols(len).colwise() = dout / static_cast<double>(len);
    Matrix de;
    birnn_backward(emb, enc, dh, {rf.W, rf.U, rf.b}, {rb.W, rb.U, rb.b}, {df.W, df.U, df.b},
                   {db.W, db.U, db.b}, de);
    for (int j = 0; j < len; ++j)
      dtable->row(x.indices[static_cast<std::size_t>(j)]) += de.col(j).transpose();
  };

  if (tr.has_p) {
    const bool proj_p = sharing_.present(Component::projection_p);
    Vector do_p = branch_backward(tr.p, g.logits_p, g.feature_p, w.cls_p, dw.proj_p_W, dw.proj_p_b,
                                  proj_p ? w.proj_p_W : nullptr, dw.cls_p);
    if (sharing_.present(Component::rnn_p)) {
      Matrix* dtable = sharing_.present(Component::embedding_p) ? dw.embedding_p : dw.embedding;
      encoder_backward(tr.emb_p, tr.enc_p, do_p, w.rnn_p_f, w.rnn_p_b, dw.rnn_p_f, dw.rnn_p_b, dtable);
    } else {
      do_s += do_p;
    }
  }
  encoder_backward(tr.emb_s, tr.enc_s, do_s, w.rnn_f, w.rnn_b, dw.rnn_f, dw.rnn_b, dw.embedding);
}

std::size_t load_pretrained_embedding(const std::filesystem::path& path, const Vocab& vocab,
                                      Matrix& table) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open embedding file " + path.string());
  std::string line;
  std::size_t lineno = 0, replaced = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(line);
    std::string token;
    if (!(ss >> token)) continue;
    std::vector<double> values;
    double v;
    while (ss >> v) values.push_back(v);
    if (!ss.eof()) throw ParseError(lineno, "non-numeric embedding value");
    if (static_cast<Eigen::Index>(values.size()) != table.cols())
      throw ParseError(lineno, "expected " + std::to_string(table.cols()) + " values, got " +
                                   std::to_string(values.size()));
    if (!vocab.contains(token)) continue;
    const int row = vocab.lookup(token);
    table.row(row) = Eigen::Map<const Eigen::RowVectorXd>(values.data(), table.cols());
    ++replaced;
  }
  return replaced;
}

// ---------------------------------------------------------------------------

OptState make_opt_state(const ParamSet& params, double lr, double momentum) {
  OptState opt;
  opt.velocity = params.zeros_like();
  opt.lr = lr;
  opt.momentum = momentum;
  return opt;
}

void sgd_step(ParamSet& params, const ParamSet& grads, OptState& opt) {
  if (!same_layout(params, grads) || !same_layout(params, opt.velocity))
    throw ShapeError("sgd_step: params, grads and momentum buffers differ in layout");
  for (const auto& g : grads.tensors())
    if (!g.value.allFinite()) throw NumericError("non-finite gradient in " + g.name);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params.at(i);
    auto& v = opt.velocity.at(i).value;
    v = opt.momentum * v + grads.at(i).value;
    p.value -= opt.lr_for(p.component) * v;
  }
}

}  // namespace fedsc

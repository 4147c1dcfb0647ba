#include "ilb/patternnet.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "ilb/autodiff.hpp"
#include "ilb/csv.hpp"
#include "ilb/error.hpp"
#include "json.hpp"

namespace ilb {

namespace {

using ad::Var;

struct GruVars {
  Var W_z, U_z, b_z, W_r, U_r, b_r, W_c, U_c, b_c;
};

struct HeadVars {
  Var W_q, W_k, W_v;
};

struct ModelVars {
  GruVars gru;
  Var s_q, s_k, s_v;
  std::vector<HeadVars> heads;
  Var W_o;
  std::vector<Var> gcn;
  Var head_w, head_b;
};

// Parameters in PatternModel::parameters() order, as leaves or constants.
std::vector<Var> bind(const PatternModel& model, bool trainable) {
  std::vector<Var> vars;
  for (const auto& [name, m] : model.parameters()) {
    vars.push_back(trainable ? ad::leaf(*m) : ad::constant(*m));
  }
  return vars;
}

ModelVars unpack(const std::vector<Var>& v, std::size_t heads) {
  ModelVars out;
  std::size_t k = 0;
  out.gru = {v[k], v[k + 1], v[k + 2], v[k + 3], v[k + 4], v[k + 5], v[k + 6], v[k + 7], v[k + 8]};
  k += 9;
  out.s_q = v[k++];
  out.s_k = v[k++];
  out.s_v = v[k++];
  for (std::size_t h = 0; h < heads; ++h) {
    out.heads.push_back({v[k], v[k + 1], v[k + 2]});
    k += 3;
  }
  out.W_o = v[k++];
  out.gcn = {v[k], v[k + 1]};
  k += 2;
  out.head_w = v[k++];
  out.head_b = v[k++];
  return out;
}

GruVars gru_constants(const GruParams& p) {
  using ad::constant;
  return {constant(p.W_z), constant(p.U_z), constant(p.b_z), constant(p.W_r), constant(p.U_r),
          constant(p.b_r), constant(p.W_c), constant(p.U_c), constant(p.b_c)};
}

Var affine(const Var& x, const Var& W, const Var& b) {
  return ad::add_row_broadcast(ad::matmul(x, W), b);
}

// Gate weights stacked side by side so each step needs one input and one
// recurrent product: [z | r | c] for inputs, [z | r] for the hidden state.
struct FusedGru {
  Var W;    // in x 3M
  Var b;    // 1 x 3M
  Var U;    // M x 2M
  Var U_c;  // M x M
  Eigen::Index hidden = 0;
};

FusedGru fuse(const GruVars& g) {
  const std::array<Var, 3> w{g.W_z, g.W_r, g.W_c};
  const std::array<Var, 3> b{g.b_z, g.b_r, g.b_c};
  const std::array<Var, 2> u{g.U_z, g.U_r};
  return {ad::concat_cols(w), ad::concat_cols(b), ad::concat_cols(u), g.U_c, g.U_c.cols()};
}

// One recurrence step; `h` empty means the zero initial state.
Var gru_step(const FusedGru& g, const Var& x, const Var& h) {
  const auto m = g.hidden;
  const Var gx = affine(x, g.W, g.b);
  if (!h) {
    const Var z = ad::sigmoid(ad::slice_cols(gx, 0, m));
    const Var c = ad::tanh(ad::slice_cols(gx, 2 * m, m));
    return ad::hadamard(z, c);
  }
  const Var gh = ad::matmul(h, g.U);
  const Var z = ad::sigmoid(ad::add(ad::slice_cols(gx, 0, m), ad::slice_cols(gh, 0, m)));
  const Var r = ad::sigmoid(ad::add(ad::slice_cols(gx, m, m), ad::slice_cols(gh, m, m)));
  const Var c = ad::tanh(
      ad::add(ad::slice_cols(gx, 2 * m, m), ad::matmul(ad::hadamard(r, h), g.U_c)));
  return ad::add(ad::hadamard(ad::one_minus(z), h), ad::hadamard(z, c));
}

// Hidden states per time step; each is n x M for a batch of n series.
std::vector<Var> gru_states(const GruVars& gru, const Matrix& windows) {
  const auto g = fuse(gru);
  std::vector<Var> states;
  states.reserve(windows.cols());
  Var h;
  for (Eigen::Index t = 0; t < windows.cols(); ++t) {
    h = gru_step(g, ad::constant(windows.col(t)), h);
    states.push_back(h);
  }
  return states;
}

// Final-step row of self-attention over each series' hidden states:
// softmax(q_s K^T / sqrt(M)) V, computed for all series at once.
Var last_step_attention(const std::vector<Var>& states, const Var& W_q, const Var& W_k,
                        const Var& W_v) {
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(states.back().cols()));
  const Var q = ad::matmul(states.back(), W_q);
  std::vector<Var> scores;
  std::vector<Var> values;
  scores.reserve(states.size());
  values.reserve(states.size());
  for (const auto& h : states) {
    scores.push_back(ad::scale(ad::row_dot(q, ad::matmul(h, W_k)), inv_sqrt));
    values.push_back(ad::matmul(h, W_v));
  }
  const Var weights = ad::softmax_rows(ad::concat_cols(scores));
  std::vector<Var> weighted;
  weighted.reserve(values.size());
  for (std::size_t t = 0; t < values.size(); ++t) {
    weighted.push_back(ad::scale_rows(values[t], ad::column(weights, static_cast<Eigen::Index>(t))));
  }
  return ad::sum_of(weighted);
}

struct AttentionVars {
  Var similarity;
  Var output;
};

AttentionVars multi_head(const std::vector<HeadVars>& heads, const Var& W_o, const Var& E) {
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(E.cols()));
  std::vector<Var> weights;
  std::vector<Var> outputs;
  for (const auto& head : heads) {
    const Var q = ad::matmul(E, head.W_q);
    const Var k = ad::matmul(E, head.W_k);
    const Var v = ad::matmul(E, head.W_v);
    const Var p = ad::softmax_rows(ad::scale(ad::matmul_transposed(q, k), inv_sqrt));
    weights.push_back(p);
    outputs.push_back(ad::matmul(p, v));
  }
  return {ad::mean_of(weights), ad::matmul(ad::concat_cols(outputs), W_o)};
}

Var normalized_adjacency(const Var& edge_weights) {
  const Var with_loops = ad::add_identity(edge_weights);
  const Var inv_sqrt_degree = ad::rsqrt(ad::row_sums(with_loops));
  return ad::scale_cols(ad::scale_rows(with_loops, inv_sqrt_degree), inv_sqrt_degree);
}

Var gcn_propagate(const Var& normalized, const Var& features, const Var& weight) {
  return ad::relu(ad::matmul(normalized, ad::matmul(features, weight)));
}

struct ForwardVars {
  Var predictions;
  Var similarity;
};

ForwardVars forward_vars(const ModelVars& m, const Matrix& windows, const Matrix& socio) {
  const auto states = gru_states(m.gru, windows);
  const Var embeddings = last_step_attention(states, m.s_q, m.s_k, m.s_v);
  const auto attention = multi_head(m.heads, m.W_o, embeddings);
  const std::array<Var, 2> parts{attention.output, ad::constant(socio)};
  const Var node_features = ad::concat_cols(parts);
  const Var adjacency = normalized_adjacency(attention.similarity);
  Var hidden = node_features;
  for (const auto& W : m.gcn) hidden = gcn_propagate(adjacency, hidden, W);
  return {affine(hidden, m.head_w, m.head_b), attention.similarity};
}

void check_inputs(const PatternModel& model, const Matrix& windows, const Matrix& socio) {
  require(windows.cols() == model.config.window, ErrorKind::Shape,
          "window length " + std::to_string(windows.cols()) + " != configured " +
              std::to_string(model.config.window));
  require(windows.rows() >= 1 && socio.rows() == windows.rows(), ErrorKind::Shape,
          "socio-economic rows must match the number of households");
  require(socio.cols() == model.config.socio_features, ErrorKind::Shape,
          "expected " + std::to_string(model.config.socio_features) + " socio-economic columns");
}

void fill_uniform(Matrix& m, Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  m.resize(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = u(rng);
  }
}

void check_finite_matrix(const Matrix& m, const std::string& what) {
  require(m.allFinite(), ErrorKind::Numerical, what + " contains non-finite values");
}

}  // namespace

SimilarityMatrix::SimilarityMatrix(Matrix values) : values_(std::move(values)) {
  require(values_.rows() == values_.cols() && values_.rows() >= 1, ErrorKind::Shape,
          "similarity matrix must be square and non-empty");
  check_finite_matrix(values_, "similarity matrix");
  require(values_.minCoeff() >= 0.0 && values_.maxCoeff() <= 1.0, ErrorKind::Numerical,
          "similarity entries must lie in [0,1]");
  require(max_row_sum_error() <= kRowSumTolerance, ErrorKind::Numerical,
          "similarity rows must sum to 1");
}

double SimilarityMatrix::max_row_sum_error() const {
  return (values_.rowwise().sum().array() - 1.0).abs().maxCoeff();
}

void write_similarity_csv(const std::filesystem::path& path, std::span<const std::string> ids,
                          const SimilarityMatrix& similarity) {
  require(static_cast<Eigen::Index>(ids.size()) == similarity.size(), ErrorKind::Shape,
          "one id per similarity row is required");
  csv::Writer out(path);
  out.row({ids.begin(), ids.end()});
  std::vector<std::string> fields(ids.size());
  for (Eigen::Index i = 0; i < similarity.size(); ++i) {
    for (Eigen::Index j = 0; j < similarity.size(); ++j) {
      fields[j] = csv::format_number(similarity(i, j));
    }
    out.row(fields);
  }
}

SimilarityMatrix read_similarity_csv(const std::filesystem::path& path,
                                     std::vector<std::string>* ids) {
  const auto table = csv::read(path);
  const auto n = static_cast<Eigen::Index>(table.header.size());
  require(static_cast<Eigen::Index>(table.rows.size()) == n, ErrorKind::Validation,
          path.string() + ": expected " + std::to_string(n) + " rows");
  Matrix values(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      values(i, j) = csv::parse_number(table.rows[i][j], "similarity", table.line_numbers[i]);
    }
  }
  if (ids) *ids = table.header;
  return SimilarityMatrix(std::move(values));
}

void GruParams::validate() const {
  const auto in = W_z.rows();
  const auto m = U_z.rows();
  auto ok = [&](const Matrix& W, const Matrix& U, const Matrix& b) {
    return W.rows() == in && W.cols() == m && U.rows() == m && U.cols() == m && b.rows() == 1 &&
           b.cols() == m;
  };
  require(m >= 1 && in >= 1 && ok(W_z, U_z, b_z) && ok(W_r, U_r, b_r) && ok(W_c, U_c, b_c),
          ErrorKind::Shape, "inconsistent GRU weight shapes");
}

void AttentionParams::validate(Eigen::Index input_width) const {
  require(!heads.empty(), ErrorKind::Shape, "attention needs at least one head");
  const auto head_dim = heads.front().W_q.cols();
  for (const auto& h : heads) {
    for (const Matrix* w : {&h.W_q, &h.W_k, &h.W_v}) {
      require(w->rows() == input_width && w->cols() == head_dim, ErrorKind::Shape,
              "attention head projections must be " + std::to_string(input_width) + " x " +
                  std::to_string(head_dim));
    }
  }
  require(W_o.rows() == head_dim * static_cast<Eigen::Index>(heads.size()), ErrorKind::Shape,
          "W_o rows must equal head_dim * heads");
}

PatternModel PatternModel::initialize(const PatternConfig& config, std::uint64_t seed,
                                      bool zero_head) {
  require(config.window >= 1 && config.embedding >= 1 && config.heads >= 1 &&
              config.socio_features >= 0 && config.gcn_hidden >= 1,
          ErrorKind::InvalidSpec, "pattern model dimensions must be positive");
  require(config.embedding % config.heads == 0, ErrorKind::InvalidSpec,
          "embedding size must be divisible by the head count");
  Rng rng(seed);
  PatternModel model;
  model.config = config;
  const Eigen::Index m = config.embedding;
  const Eigen::Index head_dim = m / config.heads;
  const double in_bound = 1.0;  // fan_in 1 for the scalar load input
  const double m_bound = 1.0 / std::sqrt(static_cast<double>(m));

  auto& g = model.encoder.gru;
  for (auto* gate : {&g.W_z, &g.W_r, &g.W_c}) fill_uniform(*gate, 1, m, in_bound, rng);
  for (auto* gate : {&g.U_z, &g.U_r, &g.U_c}) fill_uniform(*gate, m, m, m_bound, rng);
  for (auto* gate : {&g.b_z, &g.b_r, &g.b_c}) fill_uniform(*gate, 1, m, m_bound, rng);

  auto& sa = model.encoder.attention;
  for (auto* w : {&sa.W_q, &sa.W_k, &sa.W_v}) fill_uniform(*w, m, m, m_bound, rng);

  model.attention.heads.resize(config.heads);
  for (auto& head : model.attention.heads) {
    for (auto* w : {&head.W_q, &head.W_k, &head.W_v}) fill_uniform(*w, m, head_dim, m_bound, rng);
  }
  fill_uniform(model.attention.W_o, head_dim * config.heads, m,
               1.0 / std::sqrt(static_cast<double>(head_dim * config.heads)), rng);

  const Eigen::Index width = m + config.socio_features;
  const Eigen::Index hidden = config.gcn_hidden;
  model.gcn.resize(2);
  fill_uniform(model.gcn[0], width, hidden, 1.0 / std::sqrt(static_cast<double>(width)), rng);
  fill_uniform(model.gcn[1], hidden, hidden, 1.0 / std::sqrt(static_cast<double>(hidden)), rng);

  const double head_bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  fill_uniform(model.head_w, hidden, 1, head_bound, rng);
  fill_uniform(model.head_b, 1, 1, head_bound, rng);
  if (zero_head) {
    model.head_w.setZero();
    model.head_b.setZero();
  }
  return model;
}

std::vector<std::pair<std::string, Matrix*>> PatternModel::parameters() {
  std::vector<std::pair<std::string, Matrix*>> out;
  auto& g = encoder.gru;
  out.insert(out.end(), {{"gru.W_z", &g.W_z}, {"gru.U_z", &g.U_z}, {"gru.b_z", &g.b_z},
                         {"gru.W_r", &g.W_r}, {"gru.U_r", &g.U_r}, {"gru.b_r", &g.b_r},
                         {"gru.W_c", &g.W_c}, {"gru.U_c", &g.U_c}, {"gru.b_c", &g.b_c}});
  auto& sa = encoder.attention;
  out.insert(out.end(), {{"self_attention.W_q", &sa.W_q},
                         {"self_attention.W_k", &sa.W_k},
                         {"self_attention.W_v", &sa.W_v}});
  for (std::size_t h = 0; h < attention.heads.size(); ++h) {
    const std::string prefix = "attention.head" + std::to_string(h) + ".";
    auto& head = attention.heads[h];
    out.insert(out.end(),
               {{prefix + "W_q", &head.W_q}, {prefix + "W_k", &head.W_k}, {prefix + "W_v", &head.W_v}});
  }
  out.emplace_back("attention.W_o", &attention.W_o);
  for (std::size_t l = 0; l < gcn.size(); ++l) out.emplace_back("gcn.W_" + std::to_string(l + 1), &gcn[l]);
  out.emplace_back("head.W", &head_w);
  out.emplace_back("head.b", &head_b);
  return out;
}

std::vector<std::pair<std::string, const Matrix*>> PatternModel::parameters() const {
  auto mutable_view = const_cast<PatternModel*>(this)->parameters();
  return {mutable_view.begin(), mutable_view.end()};
}

std::size_t PatternModel::parameter_count() const {
  std::size_t total = 0;
  for (const auto& [name, m] : parameters()) total += static_cast<std::size_t>(m->size());
  return total;
}

Matrix gru_forward(const GruParams& params, const Matrix& sequence) {
  params.validate();
  require(sequence.rows() >= 1, ErrorKind::Shape, "GRU input sequence is empty");
  require(sequence.cols() == params.input_size(), ErrorKind::Shape,
          "GRU input width " + std::to_string(sequence.cols()) + " != " +
              std::to_string(params.input_size()));
  const auto g = fuse(gru_constants(params));
  Matrix out(sequence.rows(), params.hidden_size());
  Var h;
  for (Eigen::Index t = 0; t < sequence.rows(); ++t) {
    h = gru_step(g, ad::constant(sequence.row(t)), h);
    out.row(t) = h.value().row(0);
  }
  return out;
}

Matrix self_attention(const SelfAttentionParams& params, const Matrix& hidden) {
  const auto m = hidden.cols();
  require(m >= 1 && hidden.rows() >= 1, ErrorKind::Shape, "self-attention input is empty");
  for (const Matrix* w : {&params.W_q, &params.W_k, &params.W_v}) {
    require(w->rows() == m && w->cols() == m, ErrorKind::Shape,
            "self-attention projections must be M x M");
  }
  const Var h = ad::constant(hidden);
  const Var q = ad::matmul(h, ad::constant(params.W_q));
  const Var k = ad::matmul(h, ad::constant(params.W_k));
  const Var v = ad::matmul(h, ad::constant(params.W_v));
  const Var p = ad::softmax_rows(
      ad::scale(ad::matmul_transposed(q, k), 1.0 / std::sqrt(static_cast<double>(m))));
  return ad::matmul(p, v).value();
}

Matrix household_embeddings(const EncoderParams& encoder, const Matrix& windows) {
  encoder.gru.validate();
  require(encoder.gru.input_size() == 1, ErrorKind::Shape, "encoder expects scalar load input");
  require(windows.rows() >= 1 && windows.cols() >= 1, ErrorKind::Shape, "empty load windows");
  const auto states = gru_states(gru_constants(encoder.gru), windows);
  const auto& sa = encoder.attention;
  return last_step_attention(states, ad::constant(sa.W_q), ad::constant(sa.W_k),
                             ad::constant(sa.W_v))
      .value();
}

Eigen::VectorXd household_embedding(const EncoderParams& encoder, std::span<const double> window,
                                    int expected_window) {
  require(static_cast<int>(window.size()) == expected_window, ErrorKind::Shape,
          "window length " + std::to_string(window.size()) + " != configured " +
              std::to_string(expected_window));
  const Matrix row = Eigen::Map<const Eigen::RowVectorXd>(window.data(),
                                                         static_cast<Eigen::Index>(window.size()));
  return household_embeddings(encoder, row).row(0).transpose();
}

AttentionOutput inter_series_attention(const AttentionParams& params, const Matrix& embeddings) {
  require(embeddings.rows() >= 1, ErrorKind::Shape, "attention needs at least one household");
  params.validate(embeddings.cols());
  std::vector<HeadVars> heads;
  for (const auto& h : params.heads) {
    heads.push_back({ad::constant(h.W_q), ad::constant(h.W_k), ad::constant(h.W_v)});
  }
  const auto out = multi_head(heads, ad::constant(params.W_o), ad::constant(embeddings));
  return {SimilarityMatrix(out.similarity.value()), out.output.value()};
}

Matrix concat_features(const Matrix& temporal, const Matrix& socio) {
  require(temporal.rows() == socio.rows(), ErrorKind::Shape,
          "temporal and socio-economic row counts differ");
  Matrix out(temporal.rows(), temporal.cols() + socio.cols());
  out.leftCols(temporal.cols()) = temporal;
  out.rightCols(socio.cols()) = socio;
  return out;
}

Matrix gcn_layer(const Matrix& features, const Matrix& edge_weights, const Matrix& weight) {
  require(edge_weights.rows() == edge_weights.cols() && edge_weights.rows() == features.rows(),
          ErrorKind::Shape, "edge weights must be n x n for n feature rows");
  require(features.cols() == weight.rows(), ErrorKind::Shape, "GCN weight rows != feature width");
  require(edge_weights.size() == 0 || edge_weights.minCoeff() >= 0.0, ErrorKind::Domain,
          "edge weights must be non-negative");
  const Var adjacency = normalized_adjacency(ad::constant(edge_weights));
  return gcn_propagate(adjacency, ad::constant(features), ad::constant(weight)).value();
}

ForwardResult forward(const PatternModel& model, const Matrix& windows, const Matrix& socio) {
  check_inputs(model, windows, socio);
  const auto vars = unpack(bind(model, false), model.attention.heads.size());
  const auto out = forward_vars(vars, windows, socio);
  check_finite_matrix(out.predictions.value(), "predictions");
  return {out.predictions.value().col(0), SimilarityMatrix(out.similarity.value())};
}

Dataset build_dataset(const Community& community, const DatasetOptions& options) {
  require(options.window >= 1 && options.stride >= 1, ErrorKind::InvalidSpec,
          "window and stride must be >= 1");
  const auto& ratios = options.split_ratios;
  require(ratios[0] > 0.0 && ratios[1] > 0.0 && ratios[2] > 0.0 &&
              std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) < 1e-9,
          ErrorKind::InvalidSpec, "split ratios must be positive and sum to 1");
  require(community.size() >= 1, ErrorKind::InvalidSpec, "community is empty");
  const auto n = static_cast<Eigen::Index>(community.size());
  const auto hours = static_cast<Eigen::Index>(community.households.front().load.values.size());

  Dataset data;
  data.window = options.window;
  std::vector<int> starts;
  for (int t = 0; t + options.window < hours; t += options.stride) starts.push_back(t);
  const auto total = static_cast<double>(starts.size());
  const auto n_train = static_cast<std::size_t>(std::llround(ratios[0] * total));
  const auto n_val = static_cast<std::size_t>(std::llround(ratios[1] * total));
  require(n_train >= 1 && n_val >= 1 && n_train + n_val < starts.size(), ErrorKind::InvalidSpec,
          "load history too short for a 3-way split of " + std::to_string(starts.size()) +
              " windows");
  data.train.assign(starts.begin(), starts.begin() + static_cast<std::ptrdiff_t>(n_train));
  data.validation.assign(starts.begin() + static_cast<std::ptrdiff_t>(n_train),
                         starts.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  data.test.assign(starts.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), starts.end());

  Matrix raw(n, hours);
  for (Eigen::Index u = 0; u < n; ++u) {
    const auto& values = community.households[u].load.values;
    require(static_cast<Eigen::Index>(values.size()) == hours, ErrorKind::Shape,
            "households must share one load horizon");
    raw.row(u) = Eigen::Map<const Eigen::RowVectorXd>(values.data(), hours);
  }
  // Statistics over every hour the training windows and their targets touch.
  const Eigen::Index seen = data.train.back() + options.window + 1;
  const auto block = raw.leftCols(seen);
  data.mean = block.mean();
  const double var = (block.array() - data.mean).square().sum() / static_cast<double>(block.size());
  data.scale = var > 0.0 ? std::sqrt(var) : 1.0;
  data.series = (raw.array() - data.mean) / data.scale;
  data.socio = community.size() >= 2 ? normalize_features(community)
                                     : Matrix::Zero(n, static_cast<Eigen::Index>(kFeatureColumns.size()));
  return data;
}

double sample_loss(const PatternModel& model, const Dataset& data, int start) {
  const auto out = forward(model, data.inputs(start), data.socio);
  return (out.predictions - data.target(start).col(0)).squaredNorm() /
         static_cast<double>(out.predictions.size());
}

double mean_loss(const PatternModel& model, const Dataset& data, std::span<const int> starts) {
  require(!starts.empty(), ErrorKind::InvalidSpec, "no samples to evaluate");
  double total = 0.0;
  for (int s : starts) total += sample_loss(model, data, s);
  return total / static_cast<double>(starts.size());
}

std::vector<Matrix> loss_gradient(const PatternModel& model, const Dataset& data, int start,
                                  double* loss) {
  const Matrix windows = data.inputs(start);
  check_inputs(model, windows, data.socio);
  const auto leaves = bind(model, true);
  const auto vars = unpack(leaves, model.attention.heads.size());
  const auto out = forward_vars(vars, windows, data.socio);
  const Var objective = ad::mean_squared_error(out.predictions, data.target(start));
  ad::backward(objective);
  if (loss) *loss = objective.value()(0, 0);
  std::vector<Matrix> grads;
  grads.reserve(leaves.size());
  for (const auto& leaf : leaves) {
    grads.push_back(leaf.grad().size() ? leaf.grad() : Matrix::Zero(leaf.rows(), leaf.cols()));
  }
  return grads;
}

TrainResult train(PatternModel model, const Dataset& data, const TrainHyper& hyper) {
  require(!data.train.empty() && !data.validation.empty(), ErrorKind::InvalidSpec,
          "training and validation splits must be non-empty");
  require(hyper.epochs >= 0 && hyper.batch_size >= 1 && hyper.learning_rate >= 0.0,
          ErrorKind::InvalidSpec, "invalid training hyperparameters");
  Rng rng(hyper.seed);
  TrainResult result;
  auto& history = result.history;

  auto watch = [&](const SimilarityMatrix& a) {
    history.worst_row_sum_error = std::max(history.worst_row_sum_error, a.max_row_sum_error());
    history.min_entry = std::min(history.min_entry, a.values().minCoeff());
    history.max_entry = std::max(history.max_entry, a.values().maxCoeff());
  };
  auto evaluate = [&](std::span<const int> starts) {
    double total = 0.0;
    for (int s : starts) {
      const auto out = forward(model, data.inputs(s), data.socio);
      watch(out.similarity);
      total += (out.predictions - data.target(s).col(0)).squaredNorm() /
               static_cast<double>(out.predictions.size());
    }
    return total / static_cast<double>(starts.size());
  };

  history.train_mse.push_back(evaluate(data.train));
  history.validation_mse.push_back(evaluate(data.validation));

  auto params = model.parameters();
  std::vector<Matrix> mean_square;
  for (const auto& [name, m] : params) mean_square.push_back(Matrix::Zero(m->rows(), m->cols()));

  std::vector<int> order = data.train;
  for (int epoch = 1; epoch <= hyper.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t first = 0; first < order.size(); first += hyper.batch_size) {
      const std::size_t last = std::min(order.size(), first + hyper.batch_size);
      std::vector<Matrix> batch_grad;
      for (std::size_t k = first; k < last; ++k) {
        double loss = 0.0;
        auto grads = loss_gradient(model, data, order[k], &loss);
        epoch_loss += loss;
        if (batch_grad.empty()) {
          batch_grad = std::move(grads);
        } else {
          for (std::size_t p = 0; p < grads.size(); ++p) batch_grad[p] += grads[p];
        }
      }
      const double inv = 1.0 / static_cast<double>(last - first);
      for (std::size_t p = 0; p < params.size(); ++p) {
        const Matrix g = batch_grad[p] * inv;
        check_finite_matrix(g, "gradient of " + params[p].first);
        mean_square[p] = hyper.decay * mean_square[p] + (1.0 - hyper.decay) * g.cwiseAbs2();
        params[p].second->array() -=
            hyper.learning_rate * g.array() / (mean_square[p].array().sqrt() + hyper.epsilon);
      }
    }
    history.train_mse.push_back(epoch_loss / static_cast<double>(order.size()));
    history.validation_mse.push_back(evaluate(data.validation));
  }
  result.model = std::move(model);
  return result;
}

SimilarityMatrix final_similarity(const PatternModel& model, const Dataset& data) {
  const auto start = static_cast<int>(data.series.cols()) - data.window;
  require(start >= 0, ErrorKind::Shape, "series shorter than one window");
  return forward(model, data.series.middleCols(start, data.window), data.socio).similarity;
}

double grad_check(const PatternModel& model, const Dataset& data, int start, double epsilon,
                  GradScope scope, double floor) {
  require(floor > 0.0, ErrorKind::Domain, "relative-error floor must be positive");
  require(epsilon >= 1e-7 && epsilon <= 1e-4, ErrorKind::Domain,
          "finite-difference step must lie in [1e-7, 1e-4]");
  const auto analytic = loss_gradient(model, data, start);
  PatternModel probe = model;
  auto params = probe.parameters();
  double worst = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    require(analytic[p].allFinite(), ErrorKind::Numerical,
            "non-finite gradient for " + params[p].first);
    if (scope == GradScope::HeadOnly && params[p].first.rfind("head.", 0) != 0) continue;
    Matrix& value = *params[p].second;
    for (Eigen::Index i = 0; i < value.size(); ++i) {
      const double saved = value.data()[i];
      value.data()[i] = saved + epsilon;
      const double up = sample_loss(probe, data, start);
      value.data()[i] = saved - epsilon;
      const double down = sample_loss(probe, data, start);
      value.data()[i] = saved;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double exact = analytic[p].data()[i];
      require(std::isfinite(numeric), ErrorKind::Numerical, "non-finite finite difference");
      const double err =
          std::abs(exact - numeric) / std::max(std::abs(exact) + std::abs(numeric), floor);
      worst = std::max(worst, err);
    }
  }
  return worst;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  using nlohmann::json;
  const auto& c = checkpoint.model.config;
  json doc;
  doc["format"] = "ilb-patternnet";
  doc["version"] = 1;
  doc["seed"] = checkpoint.seed;
  doc["config"] = {{"window", c.window},
                   {"embedding", c.embedding},
                   {"heads", c.heads},
                   {"socio_features", c.socio_features},
                   {"gcn_hidden", c.gcn_hidden}};
  const auto& h = checkpoint.hyper;
  doc["hyper"] = {{"learning_rate", h.learning_rate}, {"epochs", h.epochs},
                  {"batch_size", h.batch_size},       {"decay", h.decay},
                  {"epsilon", h.epsilon},             {"seed", h.seed}};
  doc["normalization"] = {{"mean", checkpoint.data_mean}, {"scale", checkpoint.data_scale}};
  json params = json::array();
  for (const auto& [name, m] : checkpoint.model.parameters()) {
    std::vector<double> values;
    values.reserve(static_cast<std::size_t>(m->size()));
    for (Eigen::Index i = 0; i < m->rows(); ++i) {
      for (Eigen::Index j = 0; j < m->cols(); ++j) values.push_back((*m)(i, j));
    }
    params.push_back({{"name", name}, {"shape", {m->rows(), m->cols()}}, {"values", values}});
  }
  doc["parameters"] = std::move(params);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path.string());
  out << doc.dump(1) << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  using nlohmann::json;
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorKind::Validation, path.string() + ": " + e.what());
  }
  require(doc.value("format", "") == "ilb-patternnet" && doc.value("version", 0) == 1,
          ErrorKind::Validation, path.string() + " is not a version-1 pattern model checkpoint");
  Checkpoint cp;
  const auto& c = doc.at("config");
  PatternConfig config{c.at("window"), c.at("embedding"), c.at("heads"), c.at("socio_features"),
                       c.at("gcn_hidden")};
  cp.seed = doc.at("seed");
  cp.model = PatternModel::initialize(config, cp.seed);
  const auto& h = doc.at("hyper");
  cp.hyper = {h.at("learning_rate"), h.at("epochs"), h.at("batch_size"),
              h.at("decay"),         h.at("epsilon"), h.at("seed")};
  cp.data_mean = doc.at("normalization").at("mean");
  cp.data_scale = doc.at("normalization").at("scale");
  auto params = cp.model.parameters();
  const auto& stored = doc.at("parameters");
  require(stored.size() == params.size(), ErrorKind::Validation,
          "checkpoint parameter count does not match its config");
  for (std::size_t p = 0; p < params.size(); ++p) {
    const auto& entry = stored[p];
    Matrix& m = *params[p].second;
    require(entry.at("name") == params[p].first && entry.at("shape")[0] == m.rows() &&
                entry.at("shape")[1] == m.cols(),
            ErrorKind::Validation, "checkpoint parameter mismatch at " + params[p].first);
    const auto values = entry.at("values").get<std::vector<double>>();
    require(static_cast<Eigen::Index>(values.size()) == m.size(), ErrorKind::Validation,
            "checkpoint value count mismatch at " + params[p].first);
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = values[i * m.cols() + j];
    }
  }
  return cp;
}

}  // namespace ilb

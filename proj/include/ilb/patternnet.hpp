#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ilb/community.hpp"

namespace ilb {

using Matrix = Eigen::MatrixXd;

// Row-stochastic n x n attention matrix; entry (i, j) is read as how strongly
// household j's behavior informs household i's.
class SimilarityMatrix {
 public:
  SimilarityMatrix() = default;
  explicit SimilarityMatrix(Matrix values);

  const Matrix& values() const { return values_; }
  Eigen::Index size() const { return values_.rows(); }
  double operator()(Eigen::Index i, Eigen::Index j) const { return values_(i, j); }

  // Largest |row sum - 1| and the entry range, for invariant monitoring.
  double max_row_sum_error() const;

  static constexpr double kRowSumTolerance = 1e-6;

 private:
  Matrix values_;
};

void write_similarity_csv(const std::filesystem::path& path, std::span<const std::string> ids,
                          const SimilarityMatrix& similarity);
SimilarityMatrix read_similarity_csv(const std::filesystem::path& path,
                                     std::vector<std::string>* ids = nullptr);

// Standard GRU: z = sig(x Wz + h Uz + bz), r = sig(x Wr + h Ur + br),
// c = tanh(x Wc + (r*h) Uc + bc), h' = (1 - z) * h + z * c.
struct GruParams {
  Matrix W_z, U_z, b_z;
  Matrix W_r, U_r, b_r;
  Matrix W_c, U_c, b_c;

  Eigen::Index input_size() const { return W_z.rows(); }
  Eigen::Index hidden_size() const { return U_z.rows(); }
  void validate() const;
};

struct SelfAttentionParams {
  Matrix W_q, W_k, W_v;  // M x M
};

struct EncoderParams {
  GruParams gru;
  SelfAttentionParams attention;
  Eigen::Index hidden_size() const { return gru.hidden_size(); }
};

struct AttentionHead {
  Matrix W_q, W_k, W_v;  // M x head_dim
};

struct AttentionParams {
  std::vector<AttentionHead> heads;
  Matrix W_o;  // (heads * head_dim) x M_out
  void validate(Eigen::Index input_width) const;
};

struct PatternConfig {
  int window = 24;         // s, hours per input window
  int embedding = 32;      // M
  int heads = 4;
  int socio_features = 7;  // M-bar
  int gcn_hidden = 32;
};

struct PatternModel {
  PatternConfig config;
  EncoderParams encoder;
  AttentionParams attention;
  std::vector<Matrix> gcn;  // two layers: (M + M-bar) x hidden, hidden x hidden
  Matrix head_w;            // hidden x 1
  Matrix head_b;            // 1 x 1

  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization from `seed`.
  static PatternModel initialize(const PatternConfig& config, std::uint64_t seed,
                                 bool zero_head = false);

  // Stable, ordered view of every trainable matrix.
  std::vector<std::pair<std::string, Matrix*>> parameters();
  std::vector<std::pair<std::string, const Matrix*>> parameters() const;
  std::size_t parameter_count() const;
};

Matrix gru_forward(const GruParams& params, const Matrix& sequence);
Matrix self_attention(const SelfAttentionParams& params, const Matrix& hidden);
Eigen::VectorXd household_embedding(const EncoderParams& encoder, std::span<const double> window,
                                    int expected_window);
// Batched over households: row u of the result is household u's embedding.
Matrix household_embeddings(const EncoderParams& encoder, const Matrix& windows);

struct AttentionOutput {
  SimilarityMatrix similarity;  // head-averaged softmax weights
  Matrix output;                // concat(heads) * W_o
};
AttentionOutput inter_series_attention(const AttentionParams& params, const Matrix& embeddings);

Matrix concat_features(const Matrix& temporal, const Matrix& socio);

// ReLU(D^-1/2 (A + I) D^-1/2 H W) with D the row sums of A + I.
Matrix gcn_layer(const Matrix& features, const Matrix& edge_weights, const Matrix& weight);

struct ForwardResult {
  Eigen::VectorXd predictions;  // next-hour load per household, normalized units
  SimilarityMatrix similarity;
};
ForwardResult forward(const PatternModel& model, const Matrix& windows, const Matrix& socio);

// Normalized hourly series cut into windows and split chronologically.
struct Dataset {
  Matrix series;  // n x T, z-normalized with the training statistics
  Matrix socio;   // n x M-bar
  int window = 24;
  std::vector<int> train, validation, test;  // window start hours
  double mean = 0.0;
  double scale = 1.0;

  Matrix inputs(int start) const { return series.middleCols(start, window); }
  Matrix target(int start) const { return series.col(start + window); }
};

struct DatasetOptions {
  int window = 24;
  int stride = 1;
  std::array<double, 3> split_ratios{0.7, 0.2, 0.1};
};
Dataset build_dataset(const Community& community, const DatasetOptions& options);

struct TrainHyper {
  double learning_rate = 3e-4;
  int epochs = 100;
  int batch_size = 32;
  double decay = 0.9;
  double epsilon = 1e-8;
  std::uint64_t seed = 1;
};

struct TrainHistory {
  // Entry 0 is the untrained model; entry k follows epoch k.
  std::vector<double> train_mse;
  std::vector<double> validation_mse;
  // Similarity-matrix invariants over every forward pass during training.
  double worst_row_sum_error = 0.0;
  double min_entry = 1.0;
  double max_entry = 0.0;
};

struct TrainResult {
  PatternModel model;
  TrainHistory history;
};

double sample_loss(const PatternModel& model, const Dataset& data, int start);
double mean_loss(const PatternModel& model, const Dataset& data, std::span<const int> starts);
TrainResult train(PatternModel model, const Dataset& data, const TrainHyper& hyper);

// Similarity matrix for the most recent full window of the series.
SimilarityMatrix final_similarity(const PatternModel& model, const Dataset& data);

enum class GradScope { All, HeadOnly };
// Max over checked parameters of |g_a - g_n| / max(|g_a| + |g_n|, floor),
// with g_n from central differences of the MSE loss on one sample. Entries
// far below the loss's rounding noise / epsilon cannot meet a small relative
// bound with the default floor; a larger floor judges them on absolute error.
double grad_check(const PatternModel& model, const Dataset& data, int start, double epsilon,
                  GradScope scope = GradScope::All, double floor = 1e-12);

// Analytic gradient of sample_loss, in parameters() order.
std::vector<Matrix> loss_gradient(const PatternModel& model, const Dataset& data, int start,
                                  double* loss = nullptr);

struct Checkpoint {
  PatternModel model;
  TrainHyper hyper;
  std::uint64_t seed = 0;
  double data_mean = 0.0;
  double data_scale = 1.0;
};
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace ilb

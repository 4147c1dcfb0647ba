#include "ilb/selector.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <utility>

#include "ilb/autodiff.hpp"
#include "ilb/csv.hpp"
#include "ilb/error.hpp"

namespace ilb {

namespace {

constexpr int kMaxIterations = 100;
constexpr int kMaxReseeds = 10;

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t hash = 14695981039346656037ULL;
  for (unsigned char c : text) {
    hash ^= c;
    hash *= 1099511628211ULL;
  }
  return hash;
}

double squared_distance(const Matrix& points, Eigen::Index i, const Eigen::RowVectorXd& center) {
  return (points.row(i) - center).squaredNorm();
}

// k-means++: first center uniform, later ones proportional to D^2. Returns
// false when every remaining point coincides with a chosen center.
bool seed_centers(const Matrix& points, int clusters, Rng& rng, Matrix& centers) {
  const auto n = points.rows();
  centers.resize(clusters, points.cols());
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  centers.row(0) = points.row(pick(rng));
  std::vector<double> nearest(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  for (int c = 1; c < clusters; ++c) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      nearest[i] = std::min(nearest[i], squared_distance(points, i, centers.row(c - 1)));
      total += nearest[i];
    }
    if (!(total > 0.0)) return false;
    std::discrete_distribution<std::size_t> weighted(nearest.begin(), nearest.end());
    centers.row(c) = points.row(static_cast<Eigen::Index>(weighted(rng)));
  }
  return true;
}

}  // namespace

Matrix symmetrize(const Matrix& a) {
  require(a.rows() == a.cols(), ErrorKind::Shape, "symmetrize needs a square matrix");
  return (a + a.transpose()) / 2.0;
}

Matrix symmetrize(const SimilarityMatrix& a) { return symmetrize(a.values()); }

Matrix normalized_laplacian(const Matrix& a_sym) {
  require(a_sym.rows() == a_sym.cols() && a_sym.rows() >= 1, ErrorKind::Shape,
          "Laplacian needs a non-empty square matrix");
  require(a_sym.minCoeff() >= 0.0, ErrorKind::Domain, "edge weights must be non-negative");
  const double asym = (a_sym - a_sym.transpose()).cwiseAbs().maxCoeff();
  require(asym <= 1e-12 * std::max(1.0, a_sym.cwiseAbs().maxCoeff()), ErrorKind::Domain,
          "Laplacian input must be symmetric");
  const Eigen::VectorXd degree = a_sym.rowwise().sum();
  for (Eigen::Index i = 0; i < degree.size(); ++i) {
    require(degree(i) > 0.0, ErrorKind::IsolatedNode,
            "node " + std::to_string(i) + " has zero degree");
  }
  const Eigen::VectorXd inv_sqrt = degree.cwiseSqrt().cwiseInverse();
  Matrix laplacian = -(inv_sqrt.asDiagonal() * a_sym * inv_sqrt.asDiagonal());
  laplacian.diagonal().array() += 1.0;
  // Restore exact symmetry lost to rounding in the two-sided scaling.
  return (laplacian + laplacian.transpose()) / 2.0;
}

Matrix spectral_embed(const Matrix& laplacian, int k) {
  require(laplacian.rows() == laplacian.cols(), ErrorKind::Shape, "Laplacian must be square");
  require(k >= 1 && k <= laplacian.rows(), ErrorKind::Domain,
          "k must lie in [1, n]; got " + std::to_string(k));
  Eigen::SelfAdjointEigenSolver<Matrix> solver(laplacian);
  require(solver.info() == Eigen::Success, ErrorKind::Numerical, "eigensolver did not converge");
  Matrix embedding = solver.eigenvectors().leftCols(k);
  for (Eigen::Index j = 0; j < k; ++j) {
    Eigen::Index arg = 0;
    embedding.col(j).cwiseAbs().maxCoeff(&arg);
    if (embedding(arg, j) < 0.0) embedding.col(j) *= -1.0;
  }
  return embedding;
}

std::vector<int> kmeans(const Matrix& points, int clusters, std::uint64_t seed) {
  const auto n = points.rows();
  require(clusters >= 1, ErrorKind::Domain, "need at least one cluster");
  require(n >= clusters && n >= 2, ErrorKind::InsufficientPopulation,
          "k-means needs at least max(2, k) points");
  require(points.allFinite(), ErrorKind::Numerical, "k-means input contains non-finite values");
  Rng rng(seed);
  std::vector<int> assign(static_cast<std::size_t>(n), -1);

  for (int attempt = 0; attempt <= kMaxReseeds; ++attempt) {
    Matrix centers;
    if (!seed_centers(points, clusters, rng, centers)) continue;
    std::fill(assign.begin(), assign.end(), -1);
    bool degenerate = false;
    for (int iter = 0; iter < kMaxIterations; ++iter) {
      bool changed = false;
      for (Eigen::Index i = 0; i < n; ++i) {
        int best = 0;
        double best_d = squared_distance(points, i, centers.row(0));
        for (int c = 1; c < clusters; ++c) {
          const double d = squared_distance(points, i, centers.row(c));
          if (d < best_d) {
            best_d = d;
            best = c;
          }
        }
        if (assign[i] != best) {
          assign[i] = best;
          changed = true;
        }
      }
      std::vector<Eigen::Index> counts(static_cast<std::size_t>(clusters), 0);
      Matrix sums = Matrix::Zero(clusters, points.cols());
      for (Eigen::Index i = 0; i < n; ++i) {
        sums.row(assign[i]) += points.row(i);
        ++counts[assign[i]];
      }
      for (int c = 0; c < clusters; ++c) {
        if (counts[c] > 0) {
          centers.row(c) = sums.row(c) / static_cast<double>(counts[c]);
          continue;
        }
        // Empty cluster: move its center to the point farthest from its own.
        Eigen::Index far = 0;
        double far_d = -1.0;
        for (Eigen::Index i = 0; i < n; ++i) {
          const double d = squared_distance(points, i, centers.row(assign[i]));
          if (d > far_d) {
            far_d = d;
            far = i;
          }
        }
        if (!(far_d > 0.0)) {
          degenerate = true;
          break;
        }
        centers.row(c) = points.row(far);
        changed = true;
      }
      if (degenerate || !changed) break;
    }
    if (degenerate) continue;
    std::vector<bool> present(static_cast<std::size_t>(clusters), false);
    for (int a : assign) present[a] = true;
    if (std::find(present.begin(), present.end(), false) != present.end()) continue;

    std::vector<int> relabel(static_cast<std::size_t>(clusters), -1);
    int next = 0;
    for (int& a : assign) {
      if (relabel[a] < 0) relabel[a] = next++;
      a = relabel[a];
    }
    return assign;
  }
  fail(ErrorKind::DegenerateClustering,
       "could not form " + std::to_string(clusters) + " non-empty clusters");
}

std::vector<int> spectral_clusters(const SimilarityMatrix& similarity, std::uint64_t seed) {
  Matrix embedding = spectral_embed(normalized_laplacian(symmetrize(similarity)), 2);
  for (Eigen::Index i = 0; i < embedding.rows(); ++i) {
    const double norm = embedding.row(i).norm();
    if (norm > 0.0) embedding.row(i) /= norm;
  }
  return kmeans(embedding, 2, seed);
}

std::vector<std::size_t> pick_queries(const Community& community, std::span<const int> clusters,
                                      double fraction, std::uint64_t seed) {
  require(clusters.size() == community.size(), ErrorKind::Shape,
          "one cluster id per household is required");
  require(fraction > 0.0 && fraction <= 1.0, ErrorKind::Domain, "query fraction must lie in (0,1]");
  Rng rng(seed);
  std::vector<std::size_t> queried;
  for (const auto& hood : community.neighborhoods) {
    std::map<int, std::vector<std::size_t>> strata;
    for (auto u : hood.members) strata[clusters[u]].push_back(u);
    for (auto& [cluster, members] : strata) {
      const auto take = static_cast<std::size_t>(
          std::ceil(fraction * static_cast<double>(members.size()) - 1e-12));
      for (std::size_t k = 0; k < take; ++k) {
        std::uniform_int_distribution<std::size_t> pick(k, members.size() - 1);
        std::swap(members[k], members[pick(rng)]);
        queried.push_back(members[k]);
      }
    }
  }
  std::sort(queried.begin(), queried.end());
  return queried;
}

SelectionGraph SelectionGraph::from(const SimilarityMatrix& similarity,
                                    std::vector<std::string> ids) {
  require(static_cast<Eigen::Index>(ids.size()) == similarity.size(), ErrorKind::Shape,
          "one id per similarity row is required");
  return {std::move(ids), symmetrize(similarity)};
}

Classification classify(const SelectionGraph& graph, std::span<const std::size_t> labeled,
                        std::span<const int> labels, const ClassifierHyper& hyper) {
  const auto n = static_cast<Eigen::Index>(graph.size());
  require(graph.edge_weights.rows() == n && graph.edge_weights.cols() == n, ErrorKind::Shape,
          "edge weights must be n x n");
  require(graph.edge_weights.minCoeff() >= 0.0, ErrorKind::Domain,
          "edge weights must be non-negative");
  require(labeled.size() == labels.size(), ErrorKind::Shape, "one label per labeled node");
  require(hyper.hidden >= 1 && hyper.epochs >= 0 && hyper.learning_rate >= 0.0,
          ErrorKind::InvalidSpec, "invalid classifier hyperparameters");
  bool seen[2] = {false, false};
  std::vector<int> mask(static_cast<std::size_t>(n), 0);
  std::vector<int> targets(static_cast<std::size_t>(n), 0);
  for (std::size_t k = 0; k < labeled.size(); ++k) {
    require(labeled[k] < graph.size(), ErrorKind::ReferentialIntegrity, "labeled index out of range");
    require(labels[k] == 0 || labels[k] == 1, ErrorKind::Domain, "labels must be 0 or 1");
    seen[labels[k]] = true;
    mask[labeled[k]] = 1;
    targets[labeled[k]] = labels[k];
  }
  require(seen[0] && seen[1], ErrorKind::DegenerateSupervision,
          "labeled households must include both accepters and decliners");

  // One-hot features make the first layer's input transform a row lookup, so
  // row u of W1 belongs to household u and is seeded from its id.
  Matrix w1(n, hyper.hidden);
  const double b1 = 1.0 / std::sqrt(static_cast<double>(n));
  for (Eigen::Index u = 0; u < n; ++u) {
    Rng row_rng(hyper.seed ^ fnv1a(graph.ids[u]));
    std::uniform_real_distribution<double> draw(-b1, b1);
    for (Eigen::Index j = 0; j < hyper.hidden; ++j) w1(u, j) = draw(row_rng);
  }
  Rng rng(hyper.seed);
  const double b2 = 1.0 / std::sqrt(static_cast<double>(hyper.hidden));
  std::uniform_real_distribution<double> draw(-b2, b2);
  Matrix w2(hyper.hidden, 2);
  for (Eigen::Index i = 0; i < w2.size(); ++i) w2.data()[i] = draw(rng);
  Matrix bias = Matrix::Zero(1, 2);

  Matrix adjacency = graph.edge_weights;
  adjacency.diagonal().array() += 1.0;
  const Eigen::VectorXd inv_sqrt = adjacency.rowwise().sum().cwiseSqrt().cwiseInverse();
  const ad::Var norm = ad::constant(inv_sqrt.asDiagonal() * adjacency * inv_sqrt.asDiagonal());

  auto logits_of = [&](const ad::Var& a, const ad::Var& b, const ad::Var& c) {
    const ad::Var hidden = ad::relu(ad::matmul(norm, a));
    return ad::add_row_broadcast(ad::matmul(norm, ad::matmul(hidden, b)), c);
  };

  std::array<Matrix*, 3> params{&w1, &w2, &bias};
  std::array<Matrix, 3> mean_square{Matrix::Zero(w1.rows(), w1.cols()),
                                    Matrix::Zero(w2.rows(), w2.cols()), Matrix::Zero(1, 2)};
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    const std::array<ad::Var, 3> leaves{ad::leaf(w1), ad::leaf(w2), ad::leaf(bias)};
    const ad::Var loss =
        ad::softmax_cross_entropy(logits_of(leaves[0], leaves[1], leaves[2]), targets, mask);
    ad::backward(loss);
    for (std::size_t p = 0; p < params.size(); ++p) {
      const Matrix& g = leaves[p].grad();
      if (g.size() == 0) continue;
      require(g.allFinite(), ErrorKind::Numerical, "non-finite classifier gradient");
      mean_square[p] = hyper.decay * mean_square[p] + (1.0 - hyper.decay) * g.cwiseAbs2();
      params[p]->array() -=
          hyper.learning_rate * g.array() / (mean_square[p].array().sqrt() + hyper.epsilon);
    }
  }

  const Matrix logits =
      logits_of(ad::constant(w1), ad::constant(w2), ad::constant(bias)).value();
  Classification out;
  out.labels.resize(static_cast<std::size_t>(n));
  out.accept_probability.resize(n);
  for (Eigen::Index u = 0; u < n; ++u) {
    const double margin = logits(u, 1) - logits(u, 0);
    out.accept_probability(u) = 1.0 / (1.0 + std::exp(-margin));
    out.labels[u] = margin > 0.0 ? 1 : 0;
    if (mask[u]) {
      out.labels[u] = targets[u];
      out.accept_probability(u) = targets[u];
    }
  }
  return out;
}

SimilarityMatrix inject_noise(const SimilarityMatrix& a, double level_pct, std::uint64_t seed) {
  require(level_pct >= 0.0, ErrorKind::Domain, "noise level must be non-negative");
  if (level_pct == 0.0) return a;
  const double bound = level_pct / 100.0 * a.values().mean();
  Rng rng(seed);
  std::uniform_real_distribution<double> noise(0.0, bound);
  Matrix out = a.values();
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    for (Eigen::Index j = 0; j < out.cols(); ++j) out(i, j) += noise(rng);
  }
  const Eigen::VectorXd sums = out.rowwise().sum();
  for (Eigen::Index i = 0; i < out.rows(); ++i) out.row(i) /= sums(i);
  return SimilarityMatrix(std::move(out));
}

double evaluate_accuracy(std::span<const int> predicted, std::span<const int> truth,
                         std::span<const std::size_t> queried) {
  require(predicted.size() == truth.size(), ErrorKind::Shape,
          "predictions and truth differ in length");
  std::vector<bool> skip(truth.size(), false);
  for (auto u : queried) {
    require(u < truth.size(), ErrorKind::ReferentialIntegrity, "queried index out of range");
    skip[u] = true;
  }
  std::size_t total = 0;
  std::size_t correct = 0;
  for (std::size_t u = 0; u < truth.size(); ++u) {
    if (skip[u]) continue;
    ++total;
    if (predicted[u] == truth[u]) ++correct;
  }
  require(total > 0, ErrorKind::UndefinedMetric, "no unqueried households to evaluate");
  return 100.0 * static_cast<double>(correct) / static_cast<double>(total);
}

SimilarityMatrix kernel_similarity(const Matrix& features, double temperature) {
  require(temperature > 0.0, ErrorKind::Domain, "kernel temperature must be positive");
  require(features.rows() >= 1, ErrorKind::Shape, "kernel needs at least one row");
  const auto n = features.rows();
  Matrix logits(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      logits(i, j) = -(features.row(i) - features.row(j)).squaredNorm() / temperature;
    }
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    const double top = logits.row(i).maxCoeff();
    logits.row(i) = (logits.row(i).array() - top).exp().matrix();
    logits.row(i) /= logits.row(i).sum();
  }
  return SimilarityMatrix(std::move(logits));
}

bool SelectionResult::is_queried(std::size_t u) const {
  return std::binary_search(queried.begin(), queried.end(), u);
}

SelectionResult run_selection(const Community& community, const SimilarityMatrix& similarity,
                              std::span<const int> truth, const SelectionOptions& options) {
  require(static_cast<Eigen::Index>(community.size()) == similarity.size(), ErrorKind::Shape,
          "similarity matrix size differs from the community size");
  require(truth.size() == community.size(), ErrorKind::Shape, "one true label per household");
  SelectionResult result;
  for (const auto& h : community.households) result.ids.push_back(h.id);
  result.true_labels.assign(truth.begin(), truth.end());
  result.clusters = spectral_clusters(similarity, options.seed);
  result.queried = pick_queries(community, result.clusters, options.query_fraction,
                                options.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<int> answers;
  for (auto u : result.queried) answers.push_back(truth[u]);

  const bool all_same = std::adjacent_find(answers.begin(), answers.end(),
                                           std::not_equal_to<>()) == answers.end();
  if (all_same) {
    result.unanimous = true;
    const int label = answers.empty() ? 0 : answers.front();
    result.predicted.assign(community.size(), label);
    result.accept_probability = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(community.size()),
                                                          static_cast<double>(label));
  } else {
    ClassifierHyper hyper = options.classifier;
    const auto out = classify(SelectionGraph::from(similarity, result.ids), result.queried,
                              answers, hyper);
    result.predicted = out.labels;
    result.accept_probability = out.accept_probability;
  }
  result.accuracy_pct = result.queried.size() < community.size()
                            ? evaluate_accuracy(result.predicted, truth, result.queried)
                            : std::numeric_limits<double>::quiet_NaN();
  return result;
}

void write_selection_csv(const std::filesystem::path& path, const SelectionResult& result) {
  csv::Writer out(path);
  out.row({"household_id", "cluster", "queried", "true_label", "predicted_label"});
  for (std::size_t u = 0; u < result.ids.size(); ++u) {
    out.row({result.ids[u], std::to_string(result.clusters[u]), result.is_queried(u) ? "1" : "0",
             std::to_string(result.true_labels[u]), std::to_string(result.predicted[u])});
  }
}

}  // namespace ilb

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ilb/community.hpp"
#include "ilb/patternnet.hpp"

namespace ilb {

// (A + A^T) / 2.
Matrix symmetrize(const Matrix& a);
Matrix symmetrize(const SimilarityMatrix& a);

// I - D^-1/2 A D^-1/2 with D the row sums of the symmetric input.
Matrix normalized_laplacian(const Matrix& a_sym);

// Eigenvectors of the k smallest eigenvalues, ascending, one per column.
// Each column is signed so that its largest-magnitude entry is positive.
Matrix spectral_embed(const Matrix& laplacian, int k);

// Lloyd's algorithm from k-means++ seeding. Cluster ids are relabeled in
// order of first appearance, so point 0 is always in cluster 0.
std::vector<int> kmeans(const Matrix& points, int clusters, std::uint64_t seed);

// Two-way spectral clustering of the similarity graph: symmetrize, embed with
// the two bottom eigenvectors, normalize rows to unit length, then k-means.
std::vector<int> spectral_clusters(const SimilarityMatrix& similarity, std::uint64_t seed);

// ceil(fraction * size) uniformly drawn members of every (neighborhood,
// cluster) stratum. Returns ascending community indices.
std::vector<std::size_t> pick_queries(const Community& community, std::span<const int> clusters,
                                      double fraction, std::uint64_t seed);

struct SelectionGraph {
  std::vector<std::string> ids;
  Matrix edge_weights;  // symmetrized similarity

  static SelectionGraph from(const SimilarityMatrix& similarity, std::vector<std::string> ids);
  std::size_t size() const { return ids.size(); }
};

struct ClassifierHyper {
  int hidden = 32;
  double learning_rate = 0.01;
  int epochs = 200;
  double decay = 0.9;
  double epsilon = 1e-8;
  std::uint64_t seed = 1;
};

struct Classification {
  std::vector<int> labels;               // 1 = accepts the offer
  Eigen::VectorXd accept_probability;    // softmax score of label 1
};

// Two-layer GCN over one-hot node features, trained with cross-entropy on
// the labeled nodes only. Labeled nodes keep their given labels (and get
// probability 0 or 1) in the output.
Classification classify(const SelectionGraph& graph, std::span<const std::size_t> labeled,
                        std::span<const int> labels, const ClassifierHyper& hyper);

// Adds Uniform(0, level_pct/100 * mean(A)) to every entry, then divides each
// row by its sum.
SimilarityMatrix inject_noise(const SimilarityMatrix& a, double level_pct, std::uint64_t seed);

// Percent of non-queried households whose prediction matches the truth.
double evaluate_accuracy(std::span<const int> predicted, std::span<const int> truth,
                         std::span<const std::size_t> queried);

// Row-softmax of -||f_i - f_j||^2 / temperature: a similarity graph built
// directly from per-household feature vectors.
SimilarityMatrix kernel_similarity(const Matrix& features, double temperature);

struct SelectionOptions {
  double query_fraction = 0.05;
  std::uint64_t seed = 1;
  ClassifierHyper classifier;
};

struct SelectionResult {
  std::vector<std::string> ids;
  std::vector<int> clusters;
  std::vector<std::size_t> queried;  // ascending community indices
  std::vector<int> true_labels;
  std::vector<int> predicted;
  Eigen::VectorXd accept_probability;
  double accuracy_pct = 0.0;  // NaN when every household was queried
  // Set when every queried household gave the same answer; the classifier is
  // skipped and all households inherit that answer.
  bool unanimous = false;

  bool is_queried(std::size_t u) const;
};

// Clusters, queries the oracle labels of the sampled households, classifies
// the rest and scores the predictions against `truth`.
SelectionResult run_selection(const Community& community, const SimilarityMatrix& similarity,
                              std::span<const int> truth, const SelectionOptions& options);

void write_selection_csv(const std::filesystem::path& path, const SelectionResult& result);

}  // namespace ilb

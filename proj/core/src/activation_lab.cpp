#include "steerlab/activation_lab.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>

#include <nlohmann/json.hpp>

#include "steerlab/rng.hpp"

namespace steerlab {

using nlohmann::json;

std::string pooling_name(Pooling p) {
    return p == Pooling::MeanContent ? "mean" : "per_position";
}

Pooling pooling_from_name(const std::string& name) {
    if (name == "mean") return Pooling::MeanContent;
    if (name == "per_position") return Pooling::PerPosition;
    throw ConfigError("unknown pooling mode: " + name);
}

ActivationDataset capture(const ModelParams& params, std::span<const TokenSequence> sequences,
                          Pooling pooling, const std::vector<int>& exclude_token_ids) {
    if (sequences.empty()) throw ConfigError("capture: empty sequence set");
    const int n_layers = params.config.n_layers + 1;

    ActivationDataset data;
    data.pooling = pooling;
    data.layers.resize(static_cast<size_t>(n_layers));

    auto excluded = [&](int id) {
        return std::find(exclude_token_ids.begin(), exclude_token_ids.end(), id) !=
               exclude_token_ids.end();
    };

    std::vector<std::vector<Eigen::RowVectorXd>> rows(static_cast<size_t>(n_layers));
    for (size_t s = 0; s < sequences.size(); ++s) {
        const TokenSequence& seq = sequences[s];
        if (!seq.genre_label)
            throw ConfigError("capture: sequence " + std::to_string(s) + " has no genre label");
        std::vector<int> kept;
        for (int i = 0; i < seq.length(); ++i)
            if (!excluded(seq.tokens[static_cast<size_t>(i)])) kept.push_back(i);
        if (kept.empty())
            throw ConfigError("capture: sequence " + std::to_string(s) +
                              " has no content positions");

        ForwardTrace trace = forward(params, seq);
        if (pooling == Pooling::MeanContent) {
            for (int l = 0; l < n_layers; ++l) {
                Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(params.config.d_model);
                for (int i : kept) mean += trace.residual[static_cast<size_t>(l)].row(i);
                rows[static_cast<size_t>(l)].push_back(mean / static_cast<double>(kept.size()));
            }
            data.labels.push_back(*seq.genre_label);
            data.sample_index.push_back(static_cast<int>(s));
        } else {
            for (int i : kept) {
                for (int l = 0; l < n_layers; ++l)
                    rows[static_cast<size_t>(l)].push_back(
                        trace.residual[static_cast<size_t>(l)].row(i));
                data.labels.push_back(*seq.genre_label);
                data.sample_index.push_back(static_cast<int>(s));
            }
        }
    }

    for (int l = 0; l < n_layers; ++l) {
        auto& layer_rows = rows[static_cast<size_t>(l)];
        Eigen::MatrixXd m(static_cast<long>(layer_rows.size()), params.config.d_model);
        for (size_t r = 0; r < layer_rows.size(); ++r) m.row(static_cast<long>(r)) = layer_rows[r];
        data.layers[static_cast<size_t>(l)] = std::move(m);
    }
    return data;
}

void save_activations(const ActivationDataset& data, const std::filesystem::path& bin_path,
                      const std::filesystem::path& sidecar_path) {
    std::ofstream bin(bin_path, std::ios::binary);
    if (!bin) throw IoError("cannot write " + bin_path.string());
    // row-major [rows][layers][d_model], float64
    const long rows = data.rows();
    for (long r = 0; r < rows; ++r) {
        for (const Eigen::MatrixXd& layer : data.layers) {
            for (long c = 0; c < layer.cols(); ++c) {
                double v = layer(r, c);
                bin.write(reinterpret_cast<const char*>(&v), sizeof(double));
            }
        }
    }
    json sidecar;
    sidecar["rows"] = rows;
    sidecar["layers"] = data.layer_count();
    sidecar["d_model"] = data.layers.empty() ? 0 : data.layers.front().cols();
    sidecar["pooling"] = pooling_name(data.pooling);
    sidecar["labels"] = data.labels;
    sidecar["sample_index"] = data.sample_index;
    sidecar["dtype"] = "float64";
    sidecar["order"] = "row-major [rows][layers][d_model]";
    std::ofstream side(sidecar_path);
    if (!side) throw IoError("cannot write " + sidecar_path.string());
    side << sidecar.dump(2) << "\n";
}

ActivationDataset load_activations(const std::filesystem::path& bin_path,
                                   const std::filesystem::path& sidecar_path) {
    std::ifstream side(sidecar_path);
    if (!side) throw IoError("cannot read " + sidecar_path.string());
    json sidecar = json::parse(side);
    const long rows = sidecar.at("rows").get<long>();
    const int layers = sidecar.at("layers").get<int>();
    const long d = sidecar.at("d_model").get<long>();

    ActivationDataset data;
    data.pooling = pooling_from_name(sidecar.at("pooling").get<std::string>());
    data.labels = sidecar.at("labels").get<std::vector<int>>();
    data.sample_index = sidecar.at("sample_index").get<std::vector<int>>();
    data.layers.assign(static_cast<size_t>(layers), Eigen::MatrixXd(rows, d));

    std::ifstream bin(bin_path, std::ios::binary);
    if (!bin) throw IoError("cannot read " + bin_path.string());
    for (long r = 0; r < rows; ++r) {
        for (int l = 0; l < layers; ++l) {
            for (long c = 0; c < d; ++c) {
                double v = 0.0;
                if (!bin.read(reinterpret_cast<char*>(&v), sizeof(double)))
                    throw IoError("activation blob truncated: " + bin_path.string());
                data.layers[static_cast<size_t>(l)](r, c) = v;
            }
        }
    }
    return data;
}

namespace {

double wcss(const Eigen::MatrixXd& points, const Eigen::MatrixXd& centroids,
            const Eigen::VectorXi& assignments) {
    double total = 0.0;
    for (long i = 0; i < points.rows(); ++i)
        total += (points.row(i) - centroids.row(assignments[i])).squaredNorm();
    return total;
}

Eigen::VectorXi assign_points(const Eigen::MatrixXd& points, const Eigen::MatrixXd& centroids) {
    Eigen::VectorXi assignments(points.rows());
    for (long i = 0; i < points.rows(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        int best_c = 0;
        for (long c = 0; c < centroids.rows(); ++c) {
            double d2 = (points.row(i) - centroids.row(c)).squaredNorm();
            if (d2 < best) {
                best = d2;
                best_c = static_cast<int>(c);
            }
        }
        assignments[i] = best_c;
    }
    return assignments;
}

}  // namespace

KmeansResult kmeans_lloyd(const Eigen::MatrixXd& points, Eigen::MatrixXd centroids,
                          int max_iters, double tol) {
    const long n = points.rows();
    const long k = centroids.rows();
    if (n < k) throw ConfigError("kmeans: fewer points than clusters");

    KmeansResult result;
    result.centroids = std::move(centroids);
    double prev = std::numeric_limits<double>::infinity();

    for (int iter = 0; iter < max_iters; ++iter) {
        result.assignments = assign_points(points, result.centroids);

        // re-seed empty clusters at the point farthest from their centroid
        for (long c = 0; c < k; ++c) {
            if ((result.assignments.array() == static_cast<int>(c)).any()) continue;
            long farthest = 0;
            double best = -1.0;
            for (long i = 0; i < n; ++i) {
                double d2 = (points.row(i) - result.centroids.row(c)).squaredNorm();
                if (d2 > best) {
                    best = d2;
                    farthest = i;
                }
            }
            result.centroids.row(c) = points.row(farthest);
            result.assignments = assign_points(points, result.centroids);
        }

        double objective = wcss(points, result.centroids, result.assignments);
        result.objective.push_back(objective);
        if (prev - objective <= tol * std::max(1.0, std::abs(prev)) && iter > 0) break;
        prev = objective;

        for (long c = 0; c < k; ++c) {
            Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(points.cols());
            long count = 0;
            for (long i = 0; i < n; ++i) {
                if (result.assignments[i] == static_cast<int>(c)) {
                    sum += points.row(i);
                    ++count;
                }
            }
            if (count > 0) result.centroids.row(c) = sum / static_cast<double>(count);
        }
    }
    return result;
}

KmeansResult kmeans(const Eigen::MatrixXd& points, int k, std::uint64_t seed, int max_iters,
                    double tol) {
    const long n = points.rows();
    if (k < 1) throw ConfigError("kmeans: k must be >= 1");
    if (n < k) throw ConfigError("kmeans: fewer points than clusters");

    // k-means++ seeding
    Rng rng(seed);
    Eigen::MatrixXd centroids(k, points.cols());
    centroids.row(0) = points.row(static_cast<long>(rng.below(static_cast<std::uint64_t>(n))));
    Eigen::VectorXd d2 = (points.rowwise() - centroids.row(0)).rowwise().squaredNorm();
    for (int c = 1; c < k; ++c) {
        double total = d2.sum();
        long chosen;
        if (total <= 0.0) {
            chosen = static_cast<long>(rng.below(static_cast<std::uint64_t>(n)));
        } else {
            double u = rng.uniform01() * total;
            double acc = 0.0;
            chosen = n - 1;
            for (long i = 0; i < n; ++i) {
                acc += d2[i];
                if (u < acc) {
                    chosen = i;
                    break;
                }
            }
        }
        centroids.row(c) = points.row(chosen);
        d2 = d2.cwiseMin((points.rowwise() - centroids.row(c)).rowwise().squaredNorm());
    }
    return kmeans_lloyd(points, std::move(centroids), max_iters, tol);
}

namespace {

struct Contingency {
    std::map<int, std::map<int, long>> cells;
    std::map<int, long> row_sums;
    std::map<int, long> col_sums;
    long n = 0;
};

Contingency contingency(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.size() != b.size()) throw ConfigError("partition metrics: length mismatch");
    if (a.size() < 2) throw ConfigError("partition metrics: need at least 2 points");
    Contingency t;
    for (size_t i = 0; i < a.size(); ++i) {
        t.cells[a[i]][b[i]] += 1;
        t.row_sums[a[i]] += 1;
        t.col_sums[b[i]] += 1;
        t.n += 1;
    }
    return t;
}

double choose2(double x) { return x * (x - 1.0) / 2.0; }

// identical as set partitions: each row and each column has one nonzero cell
bool identical_partitions(const Contingency& t) {
    if (t.row_sums.size() != t.col_sums.size()) return false;
    for (const auto& [row, cols] : t.cells)
        if (cols.size() != 1) return false;
    std::map<int, int> col_hits;
    for (const auto& [row, cols] : t.cells)
        for (const auto& [col, count] : cols) col_hits[col] += 1;
    for (const auto& [col, hits] : col_hits)
        if (hits != 1) return false;
    return true;
}

}  // namespace

double ari(const std::vector<int>& labels, const std::vector<int>& assignments) {
    Contingency t = contingency(labels, assignments);
    // All five sums are integers held exactly in doubles (fine up to ~1e4
    // points), so the single final division is the only rounding step.
    double sum_cells = 0.0;
    for (const auto& [row, cols] : t.cells)
        for (const auto& [col, count] : cols) sum_cells += choose2(static_cast<double>(count));
    double sum_rows = 0.0;
    for (const auto& [row, count] : t.row_sums) sum_rows += choose2(static_cast<double>(count));
    double sum_cols = 0.0;
    for (const auto& [col, count] : t.col_sums) sum_cols += choose2(static_cast<double>(count));
    double pairs = choose2(static_cast<double>(t.n));

    double num = 2.0 * pairs * sum_cells - 2.0 * sum_rows * sum_cols;
    double den = pairs * (sum_rows + sum_cols) - 2.0 * sum_rows * sum_cols;
    if (den == 0.0)  // both partitions trivial
        return identical_partitions(t) ? 1.0 : 0.0;
    return num / den;
}

double nmi(const std::vector<int>& labels, const std::vector<int>& assignments) {
    Contingency t = contingency(labels, assignments);
    const double n = static_cast<double>(t.n);

    double h_labels = 0.0;
    for (const auto& [row, count] : t.row_sums) {
        double p = static_cast<double>(count) / n;
        h_labels -= p * std::log(p);
    }
    double h_assign = 0.0;
    for (const auto& [col, count] : t.col_sums) {
        double p = static_cast<double>(count) / n;
        h_assign -= p * std::log(p);
    }
    if (h_labels <= 0.0 && h_assign <= 0.0) return 1.0;  // both trivial, hence identical

    double mi = 0.0;
    for (const auto& [row, cols] : t.cells) {
        for (const auto& [col, count] : cols) {
            double p = static_cast<double>(count) / n;
            double pr = static_cast<double>(t.row_sums.at(row)) / n;
            double pc = static_cast<double>(t.col_sums.at(col)) / n;
            mi += p * std::log(p / (pr * pc));
        }
    }
    double value = mi / (0.5 * (h_labels + h_assign));
    return std::clamp(value, 0.0, 1.0);
}

Eigen::MatrixXd jaccard_matrix(const std::vector<int>& labels,
                               const std::vector<int>& assignments) {
    Contingency t = contingency(labels, assignments);
    int n_labels = 0, n_clusters = 0;
    for (int v : labels) n_labels = std::max(n_labels, v + 1);
    for (int v : assignments) n_clusters = std::max(n_clusters, v + 1);

    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n_labels, n_clusters);
    for (int g = 0; g < n_labels; ++g) {
        for (int c = 0; c < n_clusters; ++c) {
            long inter = 0;
            auto row_it = t.cells.find(g);
            if (row_it != t.cells.end()) {
                auto cell = row_it->second.find(c);
                if (cell != row_it->second.end()) inter = cell->second;
            }
            long size_g = t.row_sums.count(g) ? t.row_sums.at(g) : 0;
            long size_c = t.col_sums.count(c) ? t.col_sums.at(c) : 0;
            long uni = size_g + size_c - inter;
            m(g, c) = uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
        }
    }
    return m;
}

ClusterReport analyze_clusters(const ActivationDataset& data, int k, std::uint64_t seed,
                               int max_iters, double tol) {
    if (data.rows() < 2) throw ConfigError("analyze_clusters: need at least 2 rows");
    ClusterReport report;
    report.k = k;
    std::vector<Eigen::VectorXi> assignments(static_cast<size_t>(data.layer_count()));
    for (int l = 0; l < data.layer_count(); ++l) {
        KmeansResult km = kmeans(data.layers[static_cast<size_t>(l)], k,
                                 derive_seed(seed, "kmeans", static_cast<std::uint64_t>(l)),
                                 max_iters, tol);
        assignments[static_cast<size_t>(l)] = km.assignments;
        std::vector<int> assign(km.assignments.data(), km.assignments.data() + km.assignments.size());
        report.ari_per_layer.push_back(ari(data.labels, assign));
        report.nmi_per_layer.push_back(nmi(data.labels, assign));
    }
    report.best_layer = 0;
    for (int l = 1; l < data.layer_count(); ++l)
        if (report.ari_per_layer[static_cast<size_t>(l)] >
            report.ari_per_layer[static_cast<size_t>(report.best_layer)])
            report.best_layer = l;
    const Eigen::VectorXi& best = assignments[static_cast<size_t>(report.best_layer)];
    std::vector<int> assign(best.data(), best.data() + best.size());
    report.jaccard = jaccard_matrix(data.labels, assign);
    return report;
}

std::pair<Eigen::MatrixXd, Eigen::VectorXd> ridge_fit(const Eigen::MatrixXd& X,
                                                      const Eigen::MatrixXd& Y, double lambda) {
    if (X.rows() != Y.rows()) throw ConfigError("ridge_fit: row mismatch");
    if (X.rows() < 1) throw ConfigError("ridge_fit: empty design matrix");
    if (lambda < 0.0) throw ConfigError("ridge_fit: negative lambda");

    Eigen::RowVectorXd x_mean = X.colwise().mean();
    Eigen::RowVectorXd y_mean = Y.colwise().mean();
    Eigen::MatrixXd xc = X.rowwise() - x_mean;
    Eigen::MatrixXd yc = Y.rowwise() - y_mean;

    Eigen::MatrixXd gram = xc.transpose() * xc;
    gram.diagonal().array() += lambda;
    Eigen::MatrixXd w = gram.ldlt().solve(xc.transpose() * yc);
    Eigen::VectorXd b = y_mean.transpose() - w.transpose() * x_mean.transpose();
    return {std::move(w), std::move(b)};
}

namespace {

double default_lambda(const Eigen::MatrixXd& X) {
    Eigen::RowVectorXd mean = X.colwise().mean();
    Eigen::MatrixXd centered = X.rowwise() - mean;
    double trace = centered.squaredNorm() / std::max<double>(1.0, static_cast<double>(X.rows()));
    return 1e-3 * trace / static_cast<double>(X.cols());
}

// Stratified train/holdout row split.
std::pair<std::vector<long>, std::vector<long>> stratified_split(const std::vector<int>& labels,
                                                                 double holdout_fraction,
                                                                 std::uint64_t seed) {
    std::map<int, std::vector<long>> per_class;
    for (size_t i = 0; i < labels.size(); ++i) per_class[labels[i]].push_back(static_cast<long>(i));

    std::vector<long> train, holdout;
    Rng rng(seed);
    for (auto& [label, idx] : per_class) {
        rng.shuffle(idx);
        long n_hold = std::lround(holdout_fraction * static_cast<double>(idx.size()));
        n_hold = std::min<long>(n_hold, static_cast<long>(idx.size()) - 1);  // keep >=1 in train
        for (size_t i = 0; i < idx.size(); ++i)
            (static_cast<long>(i) < n_hold ? holdout : train).push_back(idx[i]);
    }
    std::sort(train.begin(), train.end());
    std::sort(holdout.begin(), holdout.end());
    return {std::move(train), std::move(holdout)};
}

Eigen::MatrixXd take_rows(const Eigen::MatrixXd& X, const std::vector<long>& rows) {
    Eigen::MatrixXd out(static_cast<long>(rows.size()), X.cols());
    for (size_t i = 0; i < rows.size(); ++i) out.row(static_cast<long>(i)) = X.row(rows[i]);
    return out;
}

double binary_accuracy(const Eigen::MatrixXd& X, const std::vector<int>& y,
                       const Eigen::MatrixXd& w, const Eigen::VectorXd& b) {
    long correct = 0;
    for (long i = 0; i < X.rows(); ++i) {
        double pred = X.row(i).dot(w.col(0)) + b[0];
        int cls = pred >= 0.5 ? 1 : 0;
        if (cls == y[static_cast<size_t>(i)]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(X.rows());
}

double multi_accuracy(const Eigen::MatrixXd& X, const std::vector<int>& y,
                      const Eigen::MatrixXd& w, const Eigen::VectorXd& b) {
    long correct = 0;
    for (long i = 0; i < X.rows(); ++i) {
        Eigen::VectorXd scores = w.transpose() * X.row(i).transpose() + b;
        long argmax = 0;
        scores.maxCoeff(&argmax);
        if (static_cast<int>(argmax) == y[static_cast<size_t>(i)]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(X.rows());
}

}  // namespace

ProbeModel train_binary_probe(const Eigen::MatrixXd& X, const std::vector<int>& targets01,
                              const ProbeOptions& options) {
    if (static_cast<size_t>(X.rows()) != targets01.size())
        throw ConfigError("probe: row/label mismatch");
    long ones = std::count(targets01.begin(), targets01.end(), 1);
    long zeros = std::count(targets01.begin(), targets01.end(), 0);
    if (ones + zeros != static_cast<long>(targets01.size()))
        throw ConfigError("probe: binary targets must be 0/1");
    if (ones == 0 || zeros == 0) throw ConfigError("probe: both classes must be present");

    auto [train_idx, hold_idx] = stratified_split(targets01, options.holdout_fraction, options.seed);
    Eigen::MatrixXd x_train = take_rows(X, train_idx);
    std::vector<int> y_train;
    for (long i : train_idx) y_train.push_back(targets01[static_cast<size_t>(i)]);

    Eigen::MatrixXd y_mat(static_cast<long>(y_train.size()), 1);
    for (size_t i = 0; i < y_train.size(); ++i) y_mat(static_cast<long>(i), 0) = y_train[i];

    ProbeModel probe;
    probe.lambda = options.lambda ? *options.lambda : default_lambda(x_train);
    std::tie(probe.weights, probe.bias) = ridge_fit(x_train, y_mat, probe.lambda);
    probe.train_accuracy = binary_accuracy(x_train, y_train, probe.weights, probe.bias);
    if (hold_idx.empty()) {
        probe.heldout_accuracy = probe.train_accuracy;
    } else {
        std::vector<int> y_hold;
        for (long i : hold_idx) y_hold.push_back(targets01[static_cast<size_t>(i)]);
        probe.heldout_accuracy =
            binary_accuracy(take_rows(X, hold_idx), y_hold, probe.weights, probe.bias);
    }
    probe.label0 = 0;
    probe.label1 = 1;
    return probe;
}

ProbeModel train_multi_probe(const Eigen::MatrixXd& X, const std::vector<int>& labels,
                             int n_classes, const ProbeOptions& options) {
    if (static_cast<size_t>(X.rows()) != labels.size())
        throw ConfigError("probe: row/label mismatch");
    std::vector<long> class_counts(static_cast<size_t>(n_classes), 0);
    for (int label : labels) {
        if (label < 0 || label >= n_classes) throw ConfigError("probe: label out of range");
        class_counts[static_cast<size_t>(label)] += 1;
    }
    for (int c = 0; c < n_classes; ++c)
        if (class_counts[static_cast<size_t>(c)] == 0)
            throw ConfigError("probe: class " + std::to_string(c) + " missing");

    auto [train_idx, hold_idx] = stratified_split(labels, options.holdout_fraction, options.seed);
    Eigen::MatrixXd x_train = take_rows(X, train_idx);
    std::vector<int> y_train;
    for (long i : train_idx) y_train.push_back(labels[static_cast<size_t>(i)]);

    Eigen::MatrixXd y_mat = Eigen::MatrixXd::Zero(static_cast<long>(y_train.size()), n_classes);
    for (size_t i = 0; i < y_train.size(); ++i)
        y_mat(static_cast<long>(i), y_train[i]) = 1.0;

    ProbeModel probe;
    probe.lambda = options.lambda ? *options.lambda : default_lambda(x_train);
    std::tie(probe.weights, probe.bias) = ridge_fit(x_train, y_mat, probe.lambda);
    probe.train_accuracy = multi_accuracy(x_train, y_train, probe.weights, probe.bias);
    if (hold_idx.empty()) {
        probe.heldout_accuracy = probe.train_accuracy;
    } else {
        std::vector<int> y_hold;
        for (long i : hold_idx) y_hold.push_back(labels[static_cast<size_t>(i)]);
        probe.heldout_accuracy =
            multi_accuracy(take_rows(X, hold_idx), y_hold, probe.weights, probe.bias);
    }
    return probe;
}

ProbeModel train_pair_probe(const ActivationDataset& data, int layer, int genre0, int genre1,
                            const ProbeOptions& options) {
    if (layer < 0 || layer >= data.layer_count()) throw ConfigError("probe: layer out of range");
    if (genre0 == genre1) throw ConfigError("probe: need two distinct genres");
    const Eigen::MatrixXd& X = data.layers[static_cast<size_t>(layer)];
    std::vector<long> rows;
    std::vector<int> targets;
    for (long i = 0; i < X.rows(); ++i) {
        int label = data.labels[static_cast<size_t>(i)];
        if (label == genre0 || label == genre1) {
            rows.push_back(i);
            targets.push_back(label == genre1 ? 1 : 0);
        }
    }
    ProbeModel probe = train_binary_probe(take_rows(X, rows), targets, options);
    probe.layer = layer;
    probe.label0 = genre0;
    probe.label1 = genre1;
    return probe;
}

ProbeModel train_layer_multi_probe(const ActivationDataset& data, int layer, int n_classes,
                                   const ProbeOptions& options) {
    if (layer < 0 || layer >= data.layer_count()) throw ConfigError("probe: layer out of range");
    ProbeModel probe =
        train_multi_probe(data.layers[static_cast<size_t>(layer)], data.labels, n_classes, options);
    probe.layer = layer;
    return probe;
}

int best_layer(const std::vector<ProbeModel>& probes) {
    if (probes.empty()) throw ConfigError("best_layer: no probes");
    size_t best = 0;
    for (size_t i = 1; i < probes.size(); ++i) {
        if (probes[i].heldout_accuracy > probes[best].heldout_accuracy ||
            (probes[i].heldout_accuracy == probes[best].heldout_accuracy &&
             probes[i].layer < probes[best].layer))
            best = i;
    }
    return probes[best].layer;
}

Eigen::VectorXd steering_vector(const ProbeModel& probe) {
    if (probe.weights.cols() != 1)
        throw ConfigError("steering_vector: requires a binary probe");
    double norm = probe.weights.col(0).norm();
    if (norm <= 0.0) throw ConfigError("steering_vector: zero weight vector");
    return probe.weights.col(0) / norm;
}

}  // namespace steerlab

#include "steerlab/eval.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <sstream>

#include "steerlab/rng.hpp"
#include "steerlab/steering.hpp"

namespace steerlab {

Eigen::VectorXd ProxyScorer::features(const TokenSequence& seq) const {
    std::vector<int> content;
    for (int id : seq.tokens) {
        if (std::find(strip_ids.begin(), strip_ids.end(), id) != strip_ids.end()) continue;
        if (id < 0 || id >= n_content)
            throw ConfigError("proxy: unexpected token id " + std::to_string(id));
        content.push_back(id);
    }
    Eigen::VectorXd f = Eigen::VectorXd::Zero(feature_dim());
    if (content.empty()) return f;
    for (int id : content) f[id] += 1.0;
    f.head(n_content) /= static_cast<double>(content.size());
    if (content.size() > 1) {
        for (size_t i = 1; i < content.size(); ++i)
            f[n_content + content[i - 1] * n_content + content[i]] += 1.0;
        f.tail(n_content * n_content) /= static_cast<double>(content.size() - 1);
    }
    return f;
}

Eigen::VectorXd ProxyScorer::genre_logits(const TokenSequence& seq) const {
    return weights.transpose() * features(seq) + bias;
}

int ProxyScorer::classify(const TokenSequence& seq) const {
    Eigen::VectorXd z = genre_logits(seq);
    long argmax = 0;
    z.maxCoeff(&argmax);
    return static_cast<int>(argmax);
}

namespace {

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& z) {
    Eigen::MatrixXd p(z.rows(), z.cols());
    for (long i = 0; i < z.rows(); ++i) {
        double mx = z.row(i).maxCoeff();
        Eigen::RowVectorXd e = (z.row(i).array() - mx).exp();
        p.row(i) = e / e.sum();
    }
    return p;
}

double accuracy_of(const ProxyScorer& scorer, const Eigen::MatrixXd& feats,
                   const std::vector<int>& labels) {
    long correct = 0;
    for (long i = 0; i < feats.rows(); ++i) {
        Eigen::VectorXd z = scorer.weights.transpose() * feats.row(i).transpose() + scorer.bias;
        long argmax = 0;
        z.maxCoeff(&argmax);
        if (static_cast<int>(argmax) == labels[static_cast<size_t>(i)]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(feats.rows());
}

}  // namespace

ProxyScorer train_proxy(std::span<const TokenSequence> sequences, int n_genres,
                        const VocabLayout& layout, const ProxyTrainOptions& options) {
    if (sequences.empty()) throw ConfigError("proxy: empty training split");
    if (n_genres < 2) throw ConfigError("proxy: need >= 2 genres");

    ProxyScorer scorer;
    scorer.n_content = layout.n_content;
    scorer.strip_ids = layout.non_content_ids();
    scorer.n_genres = n_genres;

    std::vector<int> labels;
    std::vector<long> per_class(static_cast<size_t>(n_genres), 0);
    for (const TokenSequence& seq : sequences) {
        if (!seq.genre_label) throw ConfigError("proxy: unlabeled sequence");
        int g = *seq.genre_label;
        if (g < 0 || g >= n_genres) throw ConfigError("proxy: genre label out of range");
        labels.push_back(g);
        per_class[static_cast<size_t>(g)] += 1;
    }
    for (int g = 0; g < n_genres; ++g)
        if (per_class[static_cast<size_t>(g)] == 0)
            throw ConfigError("proxy: split is missing genre " + std::to_string(g));

    Eigen::MatrixXd feats(static_cast<long>(sequences.size()), scorer.feature_dim());
    for (size_t i = 0; i < sequences.size(); ++i)
        feats.row(static_cast<long>(i)) = scorer.features(sequences[i]).transpose();

    // stratified holdout
    std::map<int, std::vector<long>> by_class;
    for (size_t i = 0; i < labels.size(); ++i)
        by_class[labels[i]].push_back(static_cast<long>(i));
    std::vector<long> train_rows, hold_rows;
    Rng rng(options.seed);
    for (auto& [g, idx] : by_class) {
        rng.shuffle(idx);
        long n_hold = std::lround(options.holdout_fraction * static_cast<double>(idx.size()));
        n_hold = std::min<long>(n_hold, static_cast<long>(idx.size()) - 1);
        for (size_t i = 0; i < idx.size(); ++i)
            (static_cast<long>(i) < n_hold ? hold_rows : train_rows).push_back(idx[i]);
    }
    std::sort(train_rows.begin(), train_rows.end());
    std::sort(hold_rows.begin(), hold_rows.end());

    auto take = [&](const std::vector<long>& rows, Eigen::MatrixXd& f, std::vector<int>& y) {
        f.resize(static_cast<long>(rows.size()), feats.cols());
        y.clear();
        for (size_t i = 0; i < rows.size(); ++i) {
            f.row(static_cast<long>(i)) = feats.row(rows[i]);
            y.push_back(labels[static_cast<size_t>(rows[i])]);
        }
    };
    Eigen::MatrixXd f_train, f_hold;
    std::vector<int> y_train, y_hold;
    take(train_rows, f_train, y_train);
    take(hold_rows, f_hold, y_hold);

    const long n = f_train.rows();
    Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(n, n_genres);
    for (long i = 0; i < n; ++i) onehot(i, y_train[static_cast<size_t>(i)]) = 1.0;

    // full-batch Adam on the regularized cross-entropy; zero init
    scorer.weights = Eigen::MatrixXd::Zero(scorer.feature_dim(), n_genres);
    scorer.bias = Eigen::VectorXd::Zero(n_genres);
    Eigen::MatrixXd mw = scorer.weights, vw = scorer.weights;
    Eigen::VectorXd mb = scorer.bias, vb = scorer.bias;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;

    for (int t = 1; t <= options.iterations; ++t) {
        Eigen::MatrixXd z = (f_train * scorer.weights).rowwise() + scorer.bias.transpose();
        Eigen::MatrixXd p = softmax_rows(z);
        Eigen::MatrixXd dz = (p - onehot) / static_cast<double>(n);
        Eigen::MatrixXd gw = f_train.transpose() * dz + 2.0 * options.l2 * scorer.weights;
        Eigen::VectorXd gb = dz.colwise().sum().transpose();

        double c1 = 1.0 - std::pow(b1, t), c2 = 1.0 - std::pow(b2, t);
        mw = b1 * mw + (1.0 - b1) * gw;
        vw = (b2 * vw.array() + (1.0 - b2) * gw.array().square()).matrix();
        scorer.weights.array() -=
            options.learning_rate * (mw.array() / c1) / ((vw.array() / c2).sqrt() + eps);
        mb = b1 * mb + (1.0 - b1) * gb;
        vb = (b2 * vb.array() + (1.0 - b2) * gb.array().square()).matrix();
        scorer.bias.array() -=
            options.learning_rate * (mb.array() / c1) / ((vb.array() / c2).sqrt() + eps);
    }

    scorer.train_accuracy = accuracy_of(scorer, f_train, y_train);
    scorer.heldout_accuracy =
        hold_rows.empty() ? scorer.train_accuracy : accuracy_of(scorer, f_hold, y_hold);

    if (scorer.heldout_accuracy < options.accuracy_gate)
        throw NumericError("proxy: held-out accuracy " + format_double(scorer.heldout_accuracy) +
                           " below gate " + format_double(options.accuracy_gate) +
                           " (genres insufficiently distinguishable)");
    return scorer;
}

std::pair<double, double> score(const ProxyScorer& scorer, const TokenSequence& seq, int g1,
                                int g2) {
    if (g1 == g2) throw ConfigError("score: labels must differ");
    if (g1 < 0 || g1 >= scorer.n_genres || g2 < 0 || g2 >= scorer.n_genres)
        throw ConfigError("score: genre label out of range");
    Eigen::VectorXd z = scorer.genre_logits(seq);
    double mx = std::max(z[g1], z[g2]);
    double e1 = std::exp(z[g1] - mx);
    double e2 = std::exp(z[g2] - mx);
    return {e1 / (e1 + e2), e2 / (e1 + e2)};
}

double delta_score(const ProxyScorer& scorer, const TokenSequence& original,
                   const TokenSequence& steered, int source, int target) {
    return score(scorer, steered, source, target).second -
           score(scorer, original, source, target).second;
}

std::string condition_name(Condition c) {
    return c == Condition::Steered ? "steered" : "prompted";
}

TempoPreservation tempo_preservation(const TokenSequence& original, const TokenSequence& steered,
                                     const TokenSequence& prompted, const VocabLayout& layout) {
    TempoPreservation out;
    auto h_orig = tempo_histogram(original, layout);
    if (h_orig.empty()) return out;
    auto h_steered = tempo_histogram(steered, layout);
    auto h_prompted = tempo_histogram(prompted, layout);
    if (!h_steered.empty()) out.steered_tv = tv_distance(h_orig, h_steered);
    if (!h_prompted.empty()) out.prompted_tv = tv_distance(h_orig, h_prompted);
    return out;
}

namespace {

struct RunningStats {
    double sum = 0.0, sumsq = 0.0;
    int n = 0;
    void add(double v) {
        sum += v;
        sumsq += v * v;
        ++n;
    }
    double mean() const { return n ? sum / n : 0.0; }
    double stddev() const {
        if (n < 2) return 0.0;
        return std::sqrt(std::max(0.0, (sumsq - sum * sum / n) / (n - 1)));
    }
};

}  // namespace

TransitionRunResult run_transitions(const ModelParams& params,
                                    std::span<const TransitionSpec> transitions,
                                    const ProxyScorer& scorer, const VocabLayout& layout,
                                    const std::vector<std::string>& genre_names,
                                    const TransitionRunConfig& config) {
    if (transitions.empty()) throw ConfigError("run_transitions: no transitions");
    if (config.n_per_transition < 1) throw ConfigError("run_transitions: n_per_transition >= 1");

    TransitionRunResult result;
    for (size_t t = 0; t < transitions.size(); ++t) {
        const TransitionSpec& tr = transitions[t];
        if (tr.source == tr.target) throw ConfigError("run_transitions: source == target");
        const std::string source_name = genre_names.at(static_cast<size_t>(tr.source));
        const std::string target_name = genre_names.at(static_cast<size_t>(tr.target));

        SteeringSpec spec;
        spec.direction = tr.direction;
        spec.layer = tr.layer;
        spec.alpha = tr.alpha;

        TokenSequence src_prefix{{layout.genre_tag(tr.source)}, tr.source};
        TokenSequence tgt_prefix{{layout.genre_tag(tr.target)}, tr.target};

        RunningStats orig_stats, steered_stats, prompted_stats;
        RunningStats steered_tv, prompted_tv;
        for (int i = 0; i < config.n_per_transition; ++i) {
            SamplingConfig sampling = config.sampling;
            sampling.seed = derive_seed(config.sampling.seed, "transition",
                                        static_cast<std::uint64_t>(t) *
                                                static_cast<std::uint64_t>(config.n_per_transition) +
                                            static_cast<std::uint64_t>(i));
            TokenSequence original = generate(params, src_prefix, config.gen_length, sampling);
            TokenSequence steered =
                steered_generate(params, src_prefix, spec, config.gen_length, sampling);
            TokenSequence prompted = generate(params, tgt_prefix, config.gen_length, sampling);

            orig_stats.add(score(scorer, original, tr.source, tr.target).second);
            steered_stats.add(score(scorer, steered, tr.source, tr.target).second);
            prompted_stats.add(score(scorer, prompted, tr.source, tr.target).second);

            TempoPreservation tempo = tempo_preservation(original, steered, prompted, layout);
            if (tempo.steered_tv) steered_tv.add(*tempo.steered_tv);
            if (tempo.prompted_tv) prompted_tv.add(*tempo.prompted_tv);

            if (i < config.keep_samples) {
                SampleTriple triple;
                triple.source = tr.source;
                triple.target = tr.target;
                triple.original = original;
                triple.steered = steered;
                triple.prompted = prompted;
                result.samples.push_back(std::move(triple));
            }
        }

        TransitionReport steered_row;
        steered_row.source_genre = tr.source;
        steered_row.target_genre = tr.target;
        steered_row.source_name = source_name;
        steered_row.target_name = target_name;
        steered_row.original_mean = orig_stats.mean();
        steered_row.original_std = orig_stats.stddev();
        steered_row.modified_mean = steered_stats.mean();
        steered_row.modified_std = steered_stats.stddev();
        steered_row.delta = steered_row.modified_mean - steered_row.original_mean;
        steered_row.condition = Condition::Steered;
        steered_row.n = config.n_per_transition;
        steered_row.alpha = tr.alpha;
        result.reports.push_back(steered_row);

        TransitionReport prompted_row = steered_row;
        prompted_row.modified_mean = prompted_stats.mean();
        prompted_row.modified_std = prompted_stats.stddev();
        prompted_row.delta = prompted_row.modified_mean - prompted_row.original_mean;
        prompted_row.condition = Condition::Prompted;
        prompted_row.alpha.reset();
        result.reports.push_back(prompted_row);

        TempoSummary tempo;
        tempo.source = tr.source;
        tempo.target = tr.target;
        tempo.steered_tv_mean = steered_tv.mean();
        tempo.prompted_tv_mean = prompted_tv.mean();
        tempo.steered_defined = steered_tv.n;
        tempo.prompted_defined = prompted_tv.n;
        tempo.n = config.n_per_transition;
        result.tempo.push_back(tempo);
    }
    return result;
}

namespace {

// Exact tail for n <= 50: binomial coefficients via the multiplicative
// recurrence stay below 2^53 and p^i is exact for dyadic p.
double binom_tail_exact(long k_from, long k_to, long n, double p) {
    double total = 0.0;
    double coeff = 1.0;  // C(n, 0)
    for (long i = 1; i <= k_from; ++i) coeff = coeff * static_cast<double>(n - i + 1) / i;
    for (long i = k_from; i <= k_to; ++i) {
        total += coeff * std::pow(p, static_cast<double>(i)) *
                 std::pow(1.0 - p, static_cast<double>(n - i));
        if (i < k_to) coeff = coeff * static_cast<double>(n - i) / (i + 1);
    }
    return total;
}

double binom_tail_log(long k_from, long k_to, long n, double p) {
    if (k_from > k_to) return 0.0;
    std::vector<double> logs;
    const double lg_n = std::lgamma(static_cast<double>(n) + 1.0);
    for (long i = k_from; i <= k_to; ++i) {
        double lt = lg_n - std::lgamma(static_cast<double>(i) + 1.0) -
                    std::lgamma(static_cast<double>(n - i) + 1.0) +
                    static_cast<double>(i) * std::log(p) +
                    static_cast<double>(n - i) * std::log1p(-p);
        logs.push_back(lt);
    }
    double mx = *std::max_element(logs.begin(), logs.end());
    double acc = 0.0;
    for (double lt : logs) acc += std::exp(lt - mx);
    return std::min(1.0, std::exp(mx) * acc);
}

double binom_upper(long k, long n, double p) {
    if (k <= 0) return 1.0;
    return n <= 50 ? binom_tail_exact(k, n, n, p) : binom_tail_log(k, n, n, p);
}

double binom_lower(long k, long n, double p) {
    if (k >= n) return 1.0;
    return n <= 50 ? binom_tail_exact(0, k, n, p) : binom_tail_log(0, k, n, p);
}

}  // namespace

double binom_test(long k, long n, double p0, BinomTail tail) {
    if (n < 1) throw ConfigError("binom_test: n must be >= 1");
    if (k < 0 || k > n) throw ConfigError("binom_test: k must lie in [0, n]");
    if (p0 < 0.0 || p0 > 1.0) throw ConfigError("binom_test: p0 must lie in [0, 1]");
    if (p0 == 0.0) {
        double upper = k == 0 ? 1.0 : 0.0;
        double lower = 1.0;
        if (tail == BinomTail::Greater) return upper;
        if (tail == BinomTail::Less) return lower;
        return std::min(1.0, 2.0 * std::min(upper, lower));
    }
    if (p0 == 1.0) {
        double upper = 1.0;
        double lower = k == n ? 1.0 : 0.0;
        if (tail == BinomTail::Greater) return upper;
        if (tail == BinomTail::Less) return lower;
        return std::min(1.0, 2.0 * std::min(upper, lower));
    }

    switch (tail) {
        case BinomTail::Greater: return std::min(1.0, binom_upper(k, n, p0));
        case BinomTail::Less: return std::min(1.0, binom_lower(k, n, p0));
        case BinomTail::TwoSided:
            return std::min(1.0, 2.0 * std::min(binom_upper(k, n, p0), binom_lower(k, n, p0)));
    }
    throw ConfigError("binom_test: unknown tail");
}

std::vector<TwoAfcRecord> parse_2afc_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw ConfigError("2afc: empty input");
    auto strip = [](std::string s) {
        while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.pop_back();
        size_t start = s.find_first_not_of(' ');
        return start == std::string::npos ? std::string() : s.substr(start);
    };
    if (strip(line) != "participant_id,group,transition,choice")
        throw ConfigError("2afc: expected header participant_id,group,transition,choice");

    std::vector<TwoAfcRecord> records;
    size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (strip(line).empty()) continue;
        std::stringstream ss(line);
        std::string field;
        std::vector<std::string> fields;
        while (std::getline(ss, field, ',')) fields.push_back(strip(field));
        if (fields.size() != 4)
            throw ConfigError("2afc: line " + std::to_string(line_no) + ": expected 4 fields");
        TwoAfcRecord rec{fields[0], fields[1], fields[2], fields[3]};
        if (rec.group != "musician" && rec.group != "general")
            throw ConfigError("2afc: line " + std::to_string(line_no) +
                              ": group must be musician|general");
        if (rec.choice != "steered" && rec.choice != "prompted")
            throw ConfigError("2afc: line " + std::to_string(line_no) +
                              ": choice must be steered|prompted");
        records.push_back(std::move(rec));
    }
    return records;
}

std::vector<TwoAfcCell> analyze_2afc(std::span<const TwoAfcRecord> records, BinomTail tail) {
    if (records.empty()) throw ConfigError("2afc: no records");

    std::vector<std::string> transition_order;
    std::map<std::pair<std::string, std::string>, std::pair<int, int>> counts;  // (n, steered)
    for (const TwoAfcRecord& rec : records) {
        if (std::find(transition_order.begin(), transition_order.end(), rec.transition) ==
            transition_order.end())
            transition_order.push_back(rec.transition);
        auto& cell = counts[{rec.group, rec.transition}];
        cell.first += 1;
        if (rec.choice == "steered") cell.second += 1;
    }

    std::vector<TwoAfcCell> cells;
    for (const std::string& group : {std::string("musician"), std::string("general")}) {
        for (const std::string& transition : transition_order) {
            auto it = counts.find({group, transition});
            if (it == counts.end()) continue;
            TwoAfcCell cell;
            cell.group = group;
            cell.transition = transition;
            cell.n = it->second.first;
            cell.steered_count = it->second.second;
            cell.accuracy = static_cast<double>(cell.steered_count) / cell.n;
            cell.p_value = binom_test(cell.steered_count, cell.n, 0.5, tail);
            cells.push_back(std::move(cell));
        }
    }
    return cells;
}

std::string render_2afc_markdown(std::span<const TwoAfcCell> cells) {
    std::string out;
    out += "| Group | Transition | Accuracy | P-value |\n";
    out += "|---|---|---|---|\n";
    for (const TwoAfcCell& cell : cells) {
        out += "| " + cell.group + " | " + cell.transition + " | " +
               format_double(cell.accuracy) + " | " + format_double(cell.p_value) + " |\n";
    }
    return out;
}

std::string render_2afc_csv(std::span<const TwoAfcCell> cells) {
    std::string out = "group,transition,n,steered_count,accuracy,p_value\n";
    for (const TwoAfcCell& cell : cells) {
        out += cell.group + "," + cell.transition + "," + std::to_string(cell.n) + "," +
               std::to_string(cell.steered_count) + "," + format_double(cell.accuracy) + "," +
               format_double(cell.p_value) + "\n";
    }
    return out;
}

}  // namespace steerlab

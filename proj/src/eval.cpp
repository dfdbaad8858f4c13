#include "fmmrec/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "fmmrec/nn.hpp"

namespace fmmrec {

RankingMetricReport ranking_metrics(const std::vector<std::vector<std::uint32_t>>& ranked,
                                    const std::vector<std::vector<std::uint32_t>>& relevant,
                                    std::size_t k) {
    if (ranked.size() != relevant.size())
        throw ShapeError("ranking_metrics: ranked/relevant user count mismatch");
    RankingMetricReport rep;
    rep.k = k;
    double recall_sum = 0.0, ndcg_sum = 0.0;
    for (std::size_t u = 0; u < ranked.size(); ++u) {
        const auto& rel = relevant[u];
        if (rel.empty()) {
            rep.skipped_users += 1;
            continue;
        }
        std::vector<std::uint32_t> rel_sorted(rel);
        std::sort(rel_sorted.begin(), rel_sorted.end());
        std::size_t hits = 0;
        double dcg = 0.0;
        std::size_t depth = std::min(k, ranked[u].size());
        for (std::size_t p = 0; p < depth; ++p) {
            if (std::binary_search(rel_sorted.begin(), rel_sorted.end(), ranked[u][p])) {
                hits += 1;
                dcg += 1.0 / std::log2(static_cast<double>(p) + 2.0);
            }
        }
        double idcg = 0.0;
        std::size_t ideal = std::min(k, rel.size());
        for (std::size_t p = 0; p < ideal; ++p) idcg += 1.0 / std::log2(static_cast<double>(p) + 2.0);
        double r = static_cast<double>(hits) / static_cast<double>(rel.size());
        double n = dcg / idcg;
        rep.evaluated_users.push_back(static_cast<std::uint32_t>(u));
        rep.per_user_recall.push_back(r);
        rep.per_user_ndcg.push_back(n);
        recall_sum += r;
        ndcg_sum += n;
    }
    if (!rep.evaluated_users.empty()) {
        rep.recall = recall_sum / static_cast<double>(rep.evaluated_users.size());
        rep.ndcg = ndcg_sum / static_cast<double>(rep.evaluated_users.size());
    }
    return rep;
}

double recall_at_k(const std::vector<std::vector<std::uint32_t>>& ranked,
                   const std::vector<std::vector<std::uint32_t>>& relevant, std::size_t k) {
    return ranking_metrics(ranked, relevant, k).recall;
}

double ndcg_at_k(const std::vector<std::vector<std::uint32_t>>& ranked,
                 const std::vector<std::vector<std::uint32_t>>& relevant, std::size_t k) {
    return ranking_metrics(ranked, relevant, k).ndcg;
}

double auc(const std::vector<double>& scores, const std::vector<std::uint32_t>& labels) {
    if (scores.size() != labels.size()) throw ShapeError("auc: scores/labels length mismatch");
    std::size_t n_pos = 0, n_neg = 0;
    for (auto l : labels) (l ? n_pos : n_neg) += 1;
    if (n_pos == 0 || n_neg == 0) throw DataError("auc undefined: labels contain a single class");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // average ranks over tied runs, then the Mann-Whitney rank-sum form
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
        for (std::size_t t = i; t <= j; ++t)
            if (labels[order[t]]) rank_sum_pos += avg_rank;
        i = j + 1;
    }
    double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
    return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

double micro_f1(const std::vector<std::uint32_t>& predicted,
                const std::vector<std::uint32_t>& labels) {
    if (predicted.size() != labels.size()) throw ShapeError("micro_f1 length mismatch");
    if (predicted.empty()) throw DataError("micro_f1 of empty prediction set");
    std::uint32_t classes = 0;
    for (std::size_t i = 0; i < labels.size(); ++i)
        classes = std::max({classes, labels[i] + 1, predicted[i] + 1});
    std::vector<double> tp(classes, 0), fp(classes, 0), fn(classes, 0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (predicted[i] == labels[i]) {
            tp[predicted[i]] += 1;
        } else {
            fp[predicted[i]] += 1;
            fn[labels[i]] += 1;
        }
    }
    double tps = std::accumulate(tp.begin(), tp.end(), 0.0);
    double fps = std::accumulate(fp.begin(), fp.end(), 0.0);
    double fns = std::accumulate(fn.begin(), fn.end(), 0.0);
    return tps / (tps + 0.5 * (fps + fns));
}

double ugf(const std::vector<double>& per_user_metric, const std::vector<std::uint32_t>& group) {
    if (per_user_metric.size() != group.size()) throw ShapeError("ugf length mismatch");
    double sum[2] = {0, 0};
    std::size_t cnt[2] = {0, 0};
    for (std::size_t i = 0; i < group.size(); ++i) {
        if (group[i] > 1) throw DataError("ugf requires a binary grouping");
        sum[group[i]] += per_user_metric[i];
        cnt[group[i]] += 1;
    }
    if (cnt[0] == 0 || cnt[1] == 0) throw DataError("ugf undefined: a group is empty");
    return std::abs(sum[0] / double(cnt[0]) - sum[1] / double(cnt[1]));
}

GroupFairnessReport group_fairness(const RankingMetricReport& ranking,
                                   const SensitiveAttributeTable& attrs) {
    if (ranking.evaluated_users.size() != ranking.per_user_recall.size())
        throw ShapeError("group_fairness: ranking report arrays disagree");
    GroupFairnessReport report;
    for (std::size_t k = 0; k < attrs.n_attrs(); ++k) {
        if (attrs.attrs[k].classes != 2) {
            log_warn("group fairness skips non-binary attribute ", attrs.attrs[k].name);
            continue;
        }
        double sum[2] = {0, 0};
        std::size_t cnt[2] = {0, 0};
        for (std::size_t i = 0; i < ranking.evaluated_users.size(); ++i) {
            std::uint32_t g = attrs.labels[ranking.evaluated_users[i]][k];
            if (g > 1)
                throw DataError(cat("label ", g, " out of range for binary attribute ",
                                    attrs.attrs[k].name));
            sum[g] += ranking.per_user_recall[i];
            cnt[g] += 1;
        }
        if (cnt[0] == 0 || cnt[1] == 0) {
            log_warn("group fairness skips ", attrs.attrs[k].name,
                     ": one class has no evaluated users");
            continue;
        }
        GroupFairnessEntry e;
        e.attribute = attrs.attrs[k].name;
        e.metric = cat("recall@", ranking.k);
        e.group0_mean = sum[0] / double(cnt[0]);
        e.group1_mean = sum[1] / double(cnt[1]);
        e.value = std::abs(e.group0_mean - e.group1_mean);
        e.group0_count = cnt[0];
        e.group1_count = cnt[1];
        report.entries.push_back(std::move(e));
    }
    return report;
}

namespace {

Mat<float> take_rows(const Mat<float>& m, const std::vector<std::uint32_t>& idx) {
    Mat<float> out(idx.size(), m.cols);
    for (std::size_t i = 0; i < idx.size(); ++i)
        std::copy(m.row_ptr(idx[i]), m.row_ptr(idx[i]) + m.cols, out.row_ptr(i));
    return out;
}

double plain_loss(const Mlp<float>& net, const Mat<float>& x,
                  const std::vector<std::uint32_t>& y, std::uint32_t classes) {
    Mat<float> logits = net.infer(x);
    double acc = 0.0;
    if (classes == 2) {
        for (std::size_t i = 0; i < x.rows; ++i) {
            double z = logits(i, 0);
            double p = 1.0 / (1.0 + std::exp(-z));
            p = std::min(1.0 - 1e-7, std::max(1e-7, p));
            acc -= y[i] ? std::log(p) : std::log(1.0 - p);
        }
    } else {
        for (std::size_t i = 0; i < x.rows; ++i) {
            double mx = logits(i, 0);
            for (std::size_t c = 1; c < logits.cols; ++c) mx = std::max(mx, double(logits(i, c)));
            double lse = 0.0;
            for (std::size_t c = 0; c < logits.cols; ++c)
                lse += std::exp(double(logits(i, c)) - mx);
            acc -= double(logits(i, y[i])) - mx - std::log(lse);
        }
    }
    return acc / static_cast<double>(x.rows);
}

}  // namespace

AttackerOutcome run_attacker(const Mat<float>& reps, const std::vector<std::uint32_t>& labels,
                             std::uint32_t classes, const std::vector<std::uint32_t>& train_idx,
                             const std::vector<std::uint32_t>& test_idx, std::uint64_t seed,
                             const AttackerConfig& cfg) {
    if (reps.rows != labels.size()) throw ShapeError("run_attacker reps/labels mismatch");
    if (train_idx.empty() || test_idx.empty())
        throw DataError("run_attacker needs non-empty train and test sets");

    // 10% of attacker-train becomes an internal early-stopping slice.
    std::vector<std::uint32_t> shuffled(train_idx);
    Rng split_rng(derive_seed(seed, 1));
    for (std::size_t i = shuffled.size(); i > 1; --i)
        std::swap(shuffled[i - 1], shuffled[bounded_rand(split_rng, i)]);
    std::size_t n_val = shuffled.size() / 10;
    std::vector<std::uint32_t> val_idx(shuffled.begin(), shuffled.begin() + n_val);
    std::vector<std::uint32_t> fit_idx(shuffled.begin() + n_val, shuffled.end());

    auto labels_of = [&](const std::vector<std::uint32_t>& idx) {
        std::vector<std::uint32_t> out(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) out[i] = labels[idx[i]];
        return out;
    };
    Mat<float> x_fit = take_rows(reps, fit_idx);
    Mat<float> x_val = take_rows(reps, val_idx);
    Mat<float> x_test = take_rows(reps, test_idx);
    auto y_fit = labels_of(fit_idx);
    auto y_val = labels_of(val_idx);
    auto y_test = labels_of(test_idx);

    std::size_t out_dim = classes == 2 ? 1 : classes;
    Rng init_rng(derive_seed(seed, 2));
    Mlp<float> net("attacker", reps.cols, reps.cols, out_dim, init_rng, cfg.lr, cfg.dropout);
    Rng drop_rng(derive_seed(seed, 3));

    Mat<float> y_fit_mat(x_fit.rows, 1);
    for (std::size_t i = 0; i < y_fit.size(); ++i) y_fit_mat(i, 0) = static_cast<float>(y_fit[i]);

    double best_val = std::numeric_limits<double>::infinity();
    std::size_t best_epoch = 0;
    std::vector<Mat<float>> best_weights;
    auto snapshot = [&]() {
        best_weights = {net.w1.value, net.b1.value, net.w2.value, net.b2.value};
    };
    snapshot();

    std::size_t epoch = 0;
    for (; epoch < cfg.max_epochs; ++epoch) {
        Tape<float> tape;
        ParamBinder<float> bind(tape);
        NodeId x = tape.constant(x_fit);
        NodeId logits = net.apply(tape, bind, x, true, true, &drop_rng);
        NodeId loss;
        if (classes == 2) {
            loss = tape.bce(tape.sigmoid(logits), tape.constant(y_fit_mat));
        } else {
            loss = tape.nll(tape.log_softmax(logits), y_fit);
        }
        if (!std::isfinite(static_cast<double>(tape.scalar(loss))))
            throw DivergenceError("attacker training loss became non-finite");
        tape.backward(loss);
        bind.harvest();
        bind.step_all();

        double monitor = val_idx.empty() ? plain_loss(net, x_fit, y_fit, classes)
                                         : plain_loss(net, x_val, y_val, classes);
        if (monitor < best_val - 1e-6) {
            best_val = monitor;
            best_epoch = epoch;
            snapshot();
        } else if (epoch - best_epoch >= cfg.patience) {
            break;
        }
    }
    net.w1.value = best_weights[0];
    net.b1.value = best_weights[1];
    net.w2.value = best_weights[2];
    net.b2.value = best_weights[3];

    AttackerOutcome out;
    out.epochs_ran = epoch;
    Mat<float> logits = net.infer(x_test);
    if (classes == 2) {
        std::vector<double> scores(x_test.rows);
        for (std::size_t i = 0; i < x_test.rows; ++i) scores[i] = logits(i, 0);
        out.metric = "auc";
        out.value = auc(scores, y_test);
    } else {
        std::vector<std::uint32_t> pred(x_test.rows);
        for (std::size_t i = 0; i < x_test.rows; ++i) {
            std::uint32_t arg = 0;
            for (std::size_t c = 1; c < logits.cols; ++c)
                if (logits(i, c) > logits(i, arg)) arg = static_cast<std::uint32_t>(c);
            pred[i] = arg;
        }
        out.metric = "micro_f1";
        out.value = micro_f1(pred, y_test);
    }
    return out;
}

const LeakageEntry* LeakageReport::find(const std::string& attribute,
                                        const std::string& representation) const {
    for (const auto& e : entries)
        if (e.attribute == attribute && e.representation == representation) return &e;
    return nullptr;
}

void LeakageReport::append(const LeakageReport& other) {
    entries.insert(entries.end(), other.entries.begin(), other.entries.end());
}

LeakageReport audit_leakage(const Mat<float>& reps, const std::vector<std::uint32_t>& user_ids,
                            const SensitiveAttributeTable& attrs, std::uint64_t seed,
                            const std::string& rep_name, const AttackerConfig& cfg) {
    if (reps.rows != user_ids.size()) throw ShapeError("audit_leakage reps/user_ids mismatch");
    std::vector<std::uint32_t> positions(user_ids.size());
    std::iota(positions.begin(), positions.end(), 0);
    std::vector<std::uint32_t> strat(user_ids.size());
    for (std::size_t i = 0; i < user_ids.size(); ++i)
        strat[i] = attrs.labels[user_ids[i]][0];
    auto [train_pos, test_pos] = attacker_split(positions, strat, cfg.train_ratio, seed);

    LeakageReport report;
    for (std::size_t k = 0; k < attrs.n_attrs(); ++k) {
        std::vector<std::uint32_t> lab(user_ids.size());
        for (std::size_t i = 0; i < user_ids.size(); ++i) lab[i] = attrs.labels[user_ids[i]][k];
        auto outcome = run_attacker(reps, lab, attrs.attrs[k].classes, train_pos, test_pos,
                                    derive_seed(seed, 7000 + k), cfg);
        report.entries.push_back(
            {attrs.attrs[k].name, rep_name, outcome.metric, outcome.value});
    }
    return report;
}

LeakageReport probe_modality_leakage(const Dataset& ds, const std::vector<std::size_t>& quantities,
                                     bool include_variety, std::uint64_t seed,
                                     const AttackerConfig& cfg) {
    LeakageReport report;
    const auto& inter = ds.interactions;

    auto aggregate = [&](const ModalFeatureTable& tbl, std::size_t n, std::uint64_t arng_seed,
                         std::vector<std::uint32_t>& users_out) {
        Rng rng(arng_seed);
        std::vector<std::vector<float>> rows;
        users_out.clear();
        for (std::uint32_t u = 0; u < inter.n_users; ++u) {
            const auto& items = inter.train_items[u];
            if (items.empty() || (n > 0 && items.size() < n)) continue;
            std::vector<std::uint32_t> pick(items);
            if (n > 0 && n < items.size()) {
                for (std::size_t i = pick.size(); i > 1; --i)
                    std::swap(pick[i - 1], pick[bounded_rand(rng, i)]);
                pick.resize(n);
            }
            std::vector<float> agg(tbl.dim, 0.0f);
            for (auto v : pick)
                for (std::uint32_t c = 0; c < tbl.dim; ++c) agg[c] += tbl.features(v, c);
            for (auto& x : agg) x /= static_cast<float>(pick.size());
            rows.push_back(std::move(agg));
            users_out.push_back(u);
        }
        Mat<float> out(rows.size(), tbl.dim);
        for (std::size_t i = 0; i < rows.size(); ++i)
            std::copy(rows[i].begin(), rows[i].end(), out.row_ptr(i));
        return out;
    };

    for (std::size_t mi = 0; mi < ds.modalities.size(); ++mi) {
        const auto& tbl = ds.modalities[mi];
        for (std::size_t n : quantities) {
            std::vector<std::uint32_t> users;
            Mat<float> reps = aggregate(tbl, n, derive_seed(seed, 9000 + mi * 100 + n), users);
            if (users.size() < 10) {
                log_warn("probe skipped ", tbl.name, " at n=", n, ": only ", users.size(),
                         " users have enough history");
                continue;
            }
            std::string name = cat(tbl.name, "[n=", n == 0 ? std::string("full") : cat(n), "]");
            report.append(
                audit_leakage(reps, users, ds.attributes, derive_seed(seed, 9500 + mi), name, cfg));
        }
    }

    if (include_variety && !ds.modalities.empty()) {
        std::vector<std::uint32_t> users;
        std::vector<Mat<float>> per_modal;
        for (std::size_t mi = 0; mi < ds.modalities.size(); ++mi) {
            std::vector<std::uint32_t> u2;
            per_modal.push_back(aggregate(ds.modalities[mi], 0, 0, u2));
            users = u2;  // n=0 keeps every user with history, identical across modalities
        }
        std::size_t total_dim = 0;
        for (const auto& m : per_modal) total_dim += m.cols;
        Mat<float> vta(users.size(), total_dim);
        for (std::size_t i = 0; i < users.size(); ++i) {
            std::size_t off = 0;
            for (const auto& m : per_modal) {
                std::copy(m.row_ptr(i), m.row_ptr(i) + m.cols, vta.row_ptr(i) + off);
                off += m.cols;
            }
        }
        report.append(
            audit_leakage(vta, users, ds.attributes, derive_seed(seed, 9900), "vta", cfg));
    }
    return report;
}

void write_report_tsv(const LeakageReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError(cat("cannot write ", path));
    for (const auto& e : report.entries)
        out << e.metric << '\t' << e.attribute << '\t' << e.representation << '\t' << e.value
            << '\n';
    if (!out) throw DataError(cat("short write to ", path));
}

}  // namespace fmmrec

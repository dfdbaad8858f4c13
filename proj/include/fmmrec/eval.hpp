#pragma once

#include <string>
#include <vector>

#include "fmmrec/data.hpp"
#include "fmmrec/mat.hpp"

namespace fmmrec {

struct RankingMetricReport {
    std::size_t k = 20;
    double recall = 0.0;
    double ndcg = 0.0;
    std::vector<std::uint32_t> evaluated_users;
    std::vector<double> per_user_recall;
    std::vector<double> per_user_ndcg;
    std::size_t skipped_users = 0;
};

// ranked[u] is user u's recommendation list (longest prefix used is k);
// relevant[u] the user's held-out items. Users with no held-out items are
// skipped and counted.
RankingMetricReport ranking_metrics(const std::vector<std::vector<std::uint32_t>>& ranked,
                                    const std::vector<std::vector<std::uint32_t>>& relevant,
                                    std::size_t k);

double recall_at_k(const std::vector<std::vector<std::uint32_t>>& ranked,
                   const std::vector<std::vector<std::uint32_t>>& relevant, std::size_t k);
double ndcg_at_k(const std::vector<std::vector<std::uint32_t>>& ranked,
                 const std::vector<std::vector<std::uint32_t>>& relevant, std::size_t k);

// Mann-Whitney AUC with ties counted 0.5; labels must contain both classes.
double auc(const std::vector<double>& scores, const std::vector<std::uint32_t>& labels);

// Micro-averaged F1 over the class-wise confusion sums; equals accuracy for
// single-label predictions.
double micro_f1(const std::vector<std::uint32_t>& predicted,
                const std::vector<std::uint32_t>& labels);

// Absolute difference of group-mean metric values over a binary grouping.
double ugf(const std::vector<double>& per_user_metric, const std::vector<std::uint32_t>& group);

struct GroupFairnessEntry {
    std::string attribute;
    std::string metric;  // per-user metric the disparity is taken over
    double group0_mean = 0.0;
    double group1_mean = 0.0;
    double value = 0.0;  // |group0_mean - group1_mean|
    std::size_t group0_count = 0;
    std::size_t group1_count = 0;
};

struct GroupFairnessReport {
    std::vector<GroupFairnessEntry> entries;
};

// Recall disparity between the two classes of every binary attribute, over
// the users the ranking report evaluated. Attributes with more than two
// classes, or with one class absent among those users, are skipped with a
// warning.
GroupFairnessReport group_fairness(const RankingMetricReport& ranking,
                                   const SensitiveAttributeTable& attrs);

struct AttackerConfig {
    double lr = 1e-3;
    std::size_t max_epochs = 1500;  // full-batch steps; early stopping usually cuts this
    std::size_t patience = 20;
    double dropout = 0.2;
    double train_ratio = 0.8;
};

struct AttackerOutcome {
    std::string metric;  // "auc" for binary attributes, "micro_f1" otherwise
    double value = 0.0;
    std::size_t epochs_ran = 0;
};

// Trains the surrogate attacker (two-layer MLP mirroring the pipeline's
// discriminator capacity) on reps[train_idx] and audits reps[test_idx].
AttackerOutcome run_attacker(const Mat<float>& reps, const std::vector<std::uint32_t>& labels,
                             std::uint32_t classes, const std::vector<std::uint32_t>& train_idx,
                             const std::vector<std::uint32_t>& test_idx, std::uint64_t seed,
                             const AttackerConfig& cfg);

struct LeakageEntry {
    std::string attribute;
    std::string representation;
    std::string metric;
    double value = 0.0;
};

struct LeakageReport {
    std::vector<LeakageEntry> entries;

    const LeakageEntry* find(const std::string& attribute,
                             const std::string& representation) const;
    void append(const LeakageReport& other);
};

// Audits one frozen representation table (row i belongs to user_ids[i])
// against every sensitive attribute. The 80/20 attacker partition is
// stratified by the first attribute and shared across attributes.
LeakageReport audit_leakage(const Mat<float>& reps, const std::vector<std::uint32_t>& user_ids,
                            const SensitiveAttributeTable& attrs, std::uint64_t seed,
                            const std::string& rep_name, const AttackerConfig& cfg);

// Quantity/variety leakage probe: mean-aggregates n sampled train items per
// user (n = 0 means full history) per modality, plus the concatenated
// all-modality representation named "vta", and audits each table.
LeakageReport probe_modality_leakage(const Dataset& ds, const std::vector<std::size_t>& quantities,
                                     bool include_variety, std::uint64_t seed,
                                     const AttackerConfig& cfg);

// TSV rows: metric <TAB> attribute <TAB> representation <TAB> value
void write_report_tsv(const LeakageReport& report, const std::string& path);

}  // namespace fmmrec

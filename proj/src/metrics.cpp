#include "craft/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace craft {

void EvalMatrix::validate_complete() const {
    int64_t t = tasks();
    if (t == 0 || static_cast<int64_t>(scores.size()) != t)
        throw std::invalid_argument("eval matrix: incomplete, have " + std::to_string(scores.size()) +
                                    " rows for " + std::to_string(t) + " tasks");
    for (int64_t j = 0; j < t; ++j)
        if (static_cast<int64_t>(scores[static_cast<size_t>(j)].size()) != j + 1)
            throw std::invalid_argument("eval matrix: row " + std::to_string(j) + " has " +
                                        std::to_string(scores[static_cast<size_t>(j)].size()) + " entries, want " +
                                        std::to_string(j + 1));
}

std::vector<int64_t> greedy_decode(const FrozenBackbone& backbone, const Intervention* iv,
                                   const std::vector<int64_t>& prompt, int64_t n_tokens) {
    std::vector<int64_t> seq = prompt;
    std::vector<int64_t> out;
    HookSet hooks = iv ? iv->hooks(static_cast<int64_t>(prompt.size())) : HookSet();
    for (int64_t i = 0; i < n_tokens; ++i) {
        ForwardResult fr = backbone.forward(seq, hooks);
        int64_t last = static_cast<int64_t>(seq.size()) - 1;
        int64_t vocab = backbone.config().vocab_size;
        int64_t arg = 0;
        double best = fr.logits->at(last, 0);
        for (int64_t v = 1; v < vocab; ++v) {
            double x = fr.logits->at(last, v);
            if (x > best) {
                best = x;
                arg = v;
            }
        }
        out.push_back(arg);
        seq.push_back(arg);
    }
    return out;
}

double exact_match_score(const TaskInstance& task, const Intervention& iv, const FrozenBackbone& backbone) {
    if (task.heldout.empty()) throw std::invalid_argument("score: task '" + task.name + "' has no held-out split");
    int64_t hits = 0;
    for (const auto& e : task.heldout) {
        std::vector<int64_t> got = greedy_decode(backbone, &iv, e.prompt, static_cast<int64_t>(e.label.size()));
        if (got == e.label) ++hits;
    }
    return 100.0 * static_cast<double>(hits) / static_cast<double>(task.heldout.size());
}

std::vector<double> evaluate_stream_step(int64_t j, const std::vector<TaskInstance>& tasks,
                                         const std::vector<GroupState>& groups,
                                         const std::map<int64_t, int64_t>& cluster_of,
                                         const FrozenBackbone& backbone) {
    if (j < 0 || j >= static_cast<int64_t>(tasks.size()))
        throw std::invalid_argument("evaluate_stream_step: row " + std::to_string(j) + " out of range");
    std::vector<double> row;
    for (int64_t t = 0; t <= j; ++t) {
        const TaskInstance& task = tasks[static_cast<size_t>(t)];
        auto it = cluster_of.find(task.task_id);
        if (it == cluster_of.end())
            throw std::invalid_argument("evaluate_stream_step: unknown task id " + std::to_string(task.task_id));
        int64_t gid = it->second;
        if (gid < 0 || gid >= static_cast<int64_t>(groups.size()))
            throw std::invalid_argument("evaluate_stream_step: task " + task.name + " maps to missing group " +
                                        std::to_string(gid));
        row.push_back(exact_match_score(task, groups[static_cast<size_t>(gid)].intervention, backbone));
    }
    return row;
}

double op_metric(const EvalMatrix& m) {
    m.validate_complete();
    const auto& last = m.scores.back();
    double s = 0.0;
    for (double v : last) s += v;
    return s / static_cast<double>(last.size());
}

double bwt_metric(const EvalMatrix& m) {
    m.validate_complete();
    const auto& last = m.scores.back();
    double s = 0.0;
    for (int64_t t = 0; t < m.tasks(); ++t)
        s += m.scores[static_cast<size_t>(t)][static_cast<size_t>(t)] - last[static_cast<size_t>(t)];
    return s / static_cast<double>(m.tasks());
}

std::vector<InvarianceViolation> invariance_audit(const EvalMatrix& m) {
    m.validate_complete();
    std::vector<InvarianceViolation> out;
    for (int64_t j = 1; j < m.tasks(); ++j) {
        int64_t gj = m.cluster_of.at(m.task_order[static_cast<size_t>(j)]);
        for (int64_t t = 0; t < j; ++t) {
            int64_t gt = m.cluster_of.at(m.task_order[static_cast<size_t>(t)]);
            if (gt == gj) continue;
            double prev = m.scores[static_cast<size_t>(j - 1)][static_cast<size_t>(t)];
            double cur = m.scores[static_cast<size_t>(j)][static_cast<size_t>(t)];
            if (prev != cur) out.push_back(InvarianceViolation{j, t, prev, cur});
        }
    }
    return out;
}

namespace {

std::string fmt_score(double v) {
    char buf[48];
    snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace

std::string eval_matrix_csv(const EvalMatrix& m) {
    m.validate_complete();
    std::ostringstream os;
    os << "train\\test";
    for (const auto& n : m.task_names) os << "," << n;
    os << ",cluster\n";
    for (int64_t j = 0; j < m.tasks(); ++j) {
        os << m.task_names[static_cast<size_t>(j)];
        for (int64_t t = 0; t < m.tasks(); ++t) {
            os << ",";
            if (t <= j) os << fmt_score(m.scores[static_cast<size_t>(j)][static_cast<size_t>(t)]);
        }
        os << ",G" << m.cluster_of.at(m.task_order[static_cast<size_t>(j)]) << "\n";
    }
    os << "OP," << fmt_score(op_metric(m)) << "\n";
    os << "BWT," << fmt_score(bwt_metric(m)) << "\n";
    return os.str();
}

EvalMatrix eval_matrix_from_csv(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    if (!std::getline(is, line)) throw std::invalid_argument("eval matrix csv: empty input");
    std::vector<std::string> header = split_csv_line(line);
    if (header.size() < 3 || header.front() != "train\\test" || header.back() != "cluster")
        throw std::invalid_argument("eval matrix csv: malformed header");
    int64_t t_count = static_cast<int64_t>(header.size()) - 2;

    EvalMatrix m;
    for (int64_t j = 0; j < t_count; ++j) {
        if (!std::getline(is, line)) throw std::invalid_argument("eval matrix csv: truncated rows");
        std::vector<std::string> cells = split_csv_line(line);
        if (static_cast<int64_t>(cells.size()) != t_count + 2)
            throw std::invalid_argument("eval matrix csv: bad row width at row " + std::to_string(j));
        m.task_names.push_back(cells[0]);
        m.task_order.push_back(j);
        std::vector<double> row;
        for (int64_t t = 0; t <= j; ++t) row.push_back(std::stod(cells[static_cast<size_t>(t) + 1]));
        m.scores.push_back(std::move(row));
        const std::string& cl = cells.back();
        if (cl.size() < 2 || cl[0] != 'G') throw std::invalid_argument("eval matrix csv: bad cluster cell '" + cl + "'");
        m.cluster_of[j] = std::stoll(cl.substr(1));
    }
    m.validate_complete();
    return m;
}

}  // namespace craft

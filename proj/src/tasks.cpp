#include "craft/tasks.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

namespace craft {

const char* family_kind_name(FamilyKind kind) {
    switch (kind) {
        case FamilyKind::ModularMap: return "modular";
        case FamilyKind::Copy: return "copy";
        case FamilyKind::Reverse: return "reverse";
        case FamilyKind::MarkerClass: return "marker";
    }
    return "unknown";
}

FamilyKind family_kind_from_name(const std::string& name) {
    if (name == "modular") return FamilyKind::ModularMap;
    if (name == "copy") return FamilyKind::Copy;
    if (name == "reverse") return FamilyKind::Reverse;
    if (name == "marker") return FamilyKind::MarkerClass;
    throw std::invalid_argument("unknown task family '" + name + "'");
}

namespace {

using V = VocabLayout;

// Families answer on disjoint token ranges, and copy/reverse additionally
// split the content alphabet between them, so output supports never collide
// across families. Predictions at un-hooked positions are not trainable on a
// frozen random backbone, so every family uses single-token labels; "reverse"
// is the order-inverted readout (second-to-last content token).
struct InstanceMap {
    FamilyKind kind;
    int64_t a = 1, c = 0;              // modular map coefficients
    std::vector<int64_t> out_perm;     // instance permutation on the answer index space
    std::vector<int64_t> marker_perm;  // marker family base permutation
};

constexpr int64_t kContentHalf = V::content_n / 2;  // copy uses the low half, reverse the high half

// Instances within a family share the family map and differ by one seeded
// single-input remap (instance 0 is the family map itself). Keeping siblings
// nearly identical is what lets the router discover the family structure.
std::vector<int64_t> instance_perm(int64_t n, int64_t instance, Rng& rng) {
    std::vector<int64_t> p(static_cast<size_t>(n));
    std::iota(p.begin(), p.end(), 0);
    if (instance > 0) {
        int64_t i = rng.uniform_int(0, n - 1);
        int64_t shift = rng.uniform_int(1, n - 1);
        p[static_cast<size_t>(i)] = (p[static_cast<size_t>(i)] + shift) % n;
    }
    return p;
}

InstanceMap make_instance_map(FamilyKind kind, uint64_t family_seed, int64_t instance) {
    InstanceMap m;
    m.kind = kind;
    Rng fam_rng(mix_seed(family_seed, 11));
    Rng inst_rng(mix_seed(family_seed, 100 + static_cast<uint64_t>(instance)));
    switch (kind) {
        case FamilyKind::ModularMap:
            m.a = 2 * fam_rng.uniform_int(0, 7) + 1;  // odd, so the map is a bijection
            m.c = fam_rng.uniform_int(0, V::modular_n - 1);
            m.out_perm = instance_perm(V::modular_n, instance, inst_rng);
            break;
        case FamilyKind::Copy:
            m.out_perm = instance_perm(kContentHalf, instance, inst_rng);
            break;
        case FamilyKind::Reverse:
            m.out_perm = instance_perm(kContentHalf, instance, inst_rng);
            break;
        case FamilyKind::MarkerClass: {
            m.marker_perm.resize(static_cast<size_t>(V::marker_n));
            std::iota(m.marker_perm.begin(), m.marker_perm.end(), 0);
            fam_rng.shuffle(m.marker_perm);
            m.out_perm = instance_perm(V::marker_n, instance, inst_rng);
            break;
        }
    }
    return m;
}

int64_t family_tag(FamilyKind kind) { return V::family_tag_base + static_cast<int64_t>(kind); }

int64_t noise_tok(Rng& rng) { return V::noise_base + rng.uniform_int(0, V::noise_n - 1); }

// x indexes the family's input domain; domain size differs per family.
int64_t domain_size(FamilyKind kind) {
    switch (kind) {
        case FamilyKind::ModularMap: return V::content_n;
        case FamilyKind::Copy: return kContentHalf;
        case FamilyKind::Reverse: return kContentHalf;
        case FamilyKind::MarkerClass: return V::content_n;
    }
    return V::content_n;
}

Example gen_example(const InstanceMap& m, int64_t x, Rng& rng) {
    Example e;
    switch (m.kind) {
        case FamilyKind::ModularMap: {
            e.prompt = {family_tag(m.kind), noise_tok(rng), noise_tok(rng), noise_tok(rng), V::query_tok,
                        V::content_base + x};
            int64_t y = m.out_perm[static_cast<size_t>((m.a * x + m.c) % V::modular_n)];
            e.label = {V::modular_base + y};
            break;
        }
        case FamilyKind::Copy: {
            // emit the last content token (low content half)
            e.prompt = {family_tag(m.kind), noise_tok(rng), noise_tok(rng), noise_tok(rng), V::query_tok,
                        V::content_base + x};
            e.label = {V::content_base + m.out_perm[static_cast<size_t>(x)]};
            break;
        }
        case FamilyKind::Reverse: {
            // emit the pair read in reverse order: the second-to-last token
            int64_t tail = kContentHalf + rng.uniform_int(0, kContentHalf - 1);
            e.prompt = {family_tag(m.kind), noise_tok(rng), noise_tok(rng), V::query_tok,
                        V::content_base + kContentHalf + x, V::content_base + tail};
            e.label = {V::content_base + kContentHalf + m.out_perm[static_cast<size_t>(x)]};
            break;
        }
        case FamilyKind::MarkerClass: {
            // class token sits early, in the f-stream
            e.prompt = {family_tag(m.kind), V::content_base + x, noise_tok(rng), noise_tok(rng), noise_tok(rng),
                        V::query_tok};
            int64_t cls = m.marker_perm[static_cast<size_t>(x % V::marker_n)];
            e.label = {V::marker_base + m.out_perm[static_cast<size_t>(cls)]};
            break;
        }
    }
    return e;
}

// x values cycle through the family's input domain so every class is covered
// in every split; noise makes prompts distinct across splits.
std::vector<Example> gen_split(const InstanceMap& m, int64_t n, Rng& rng, std::set<std::vector<int64_t>>& seen) {
    int64_t dom = domain_size(m.kind);
    std::vector<int64_t> xs;
    while (static_cast<int64_t>(xs.size()) < n) {
        std::vector<int64_t> cycle(static_cast<size_t>(dom));
        std::iota(cycle.begin(), cycle.end(), 0);
        rng.shuffle(cycle);
        for (int64_t x : cycle)
            if (static_cast<int64_t>(xs.size()) < n) xs.push_back(x);
    }
    std::vector<Example> out;
    out.reserve(static_cast<size_t>(n));
    for (int64_t x : xs) {
        Example e = gen_example(m, x, rng);
        int guard = 0;
        while (seen.count(e.prompt)) {
            e = gen_example(m, x, rng);
            if (++guard > 10000) throw std::runtime_error("task generation: cannot find a fresh prompt");
        }
        seen.insert(e.prompt);
        out.push_back(std::move(e));
    }
    return out;
}

TaskInstance make_task(FamilyKind kind, int64_t family_id, int64_t instance, int64_t task_id,
                       uint64_t stream_seed, const TaskGenParams& params) {
    TaskInstance t;
    t.task_id = task_id;
    t.family_id = family_id;
    t.kind = kind;
    t.name = std::string(family_kind_name(kind)) + "-" + std::to_string(instance);
    uint64_t family_seed = mix_seed(stream_seed, static_cast<uint64_t>(family_id) + 1);
    t.data_seed = mix_seed(family_seed, 0xd417 + static_cast<uint64_t>(instance));

    InstanceMap m = make_instance_map(kind, family_seed, instance);
    Rng rng(t.data_seed);
    std::set<std::vector<int64_t>> seen;
    t.train = gen_split(m, params.train_n, rng, seen);
    t.probe = gen_split(m, params.probe_n, rng, seen);
    t.heldout = gen_split(m, params.heldout_n, rng, seen);
    return t;
}

}  // namespace

std::vector<TaskInstance> generate_stream(const std::vector<FamilySpec>& spec, uint64_t stream_seed,
                                          const TaskGenParams& params) {
    if (spec.empty()) throw std::invalid_argument("generate_stream: empty family spec");
    for (const auto& f : spec)
        if (f.count < 1) throw std::invalid_argument("generate_stream: family count must be >= 1");
    if (params.train_n < 2 || params.probe_n < 1 || params.heldout_n < 1)
        throw std::invalid_argument("generate_stream: split sizes too small");

    std::vector<TaskInstance> out;
    int64_t max_count = 0;
    for (const auto& f : spec) max_count = std::max(max_count, f.count);
    int64_t task_id = 0;
    for (int64_t inst = 0; inst < max_count; ++inst)
        for (size_t fam = 0; fam < spec.size(); ++fam)
            if (inst < spec[fam].count)
                out.push_back(make_task(spec[fam].kind, static_cast<int64_t>(fam), inst, task_id++,
                                        stream_seed, params));
    return out;
}

std::vector<TaskInstance> permute_stream(std::vector<TaskInstance> tasks, uint64_t order_seed) {
    Rng rng(order_seed);
    rng.shuffle(tasks);
    return tasks;
}

namespace {

void write_example_line(std::ostream& os, const TaskInstance& t, const char* split, const Example& e) {
    os << t.task_id << " " << t.family_id << " " << family_kind_name(t.kind) << " " << t.name << " " << t.data_seed
       << " " << split << " |";
    for (int64_t tok : e.prompt) os << " " << tok;
    os << " |";
    for (int64_t tok : e.label) os << " " << tok;
    os << "\n";
}

}  // namespace

void save_tasks(const std::vector<TaskInstance>& tasks, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("save_tasks: cannot open " + path);
    for (const auto& t : tasks) {
        for (const auto& e : t.train) write_example_line(os, t, "train", e);
        for (const auto& e : t.probe) write_example_line(os, t, "probe", e);
        for (const auto& e : t.heldout) write_example_line(os, t, "heldout", e);
    }
    if (!os) throw std::runtime_error("save_tasks: write failed for " + path);
}

std::vector<TaskInstance> load_tasks(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("load_tasks: cannot open " + path);
    std::vector<TaskInstance> tasks;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        int64_t task_id, family_id;
        std::string kind_name, name, split;
        uint64_t data_seed;
        std::string bar;
        if (!(ls >> task_id >> family_id >> kind_name >> name >> data_seed >> split >> bar) || bar != "|")
            throw std::runtime_error("load_tasks: malformed record '" + line + "'");
        Example e;
        std::string tok;
        while (ls >> tok && tok != "|") e.prompt.push_back(std::stoll(tok));
        while (ls >> tok) e.label.push_back(std::stoll(tok));

        if (tasks.empty() || tasks.back().task_id != task_id) {
            TaskInstance t;
            t.task_id = task_id;
            t.family_id = family_id;
            t.kind = family_kind_from_name(kind_name);
            t.name = name;
            t.data_seed = data_seed;
            tasks.push_back(std::move(t));
        }
        TaskInstance& t = tasks.back();
        if (split == "train") t.train.push_back(std::move(e));
        else if (split == "probe") t.probe.push_back(std::move(e));
        else if (split == "heldout") t.heldout.push_back(std::move(e));
        else throw std::runtime_error("load_tasks: unknown split '" + split + "'");
    }
    return tasks;
}

std::pair<TaskInstance, TaskInstance> split_halves(const TaskInstance& task) {
    if (task.train.size() < 2)
        throw std::invalid_argument("split_halves: task '" + task.name + "' has fewer than 2 training examples");
    TaskInstance a = task, b = task;
    a.task_id = task.task_id * 10 + 1;
    b.task_id = task.task_id * 10 + 2;
    a.name = task.name + "-A";
    b.name = task.name + "-B";
    a.data_seed = mix_seed(task.data_seed, 1);
    b.data_seed = mix_seed(task.data_seed, 2);
    a.train.clear();
    b.train.clear();
    for (size_t i = 0; i < task.train.size(); ++i)
        (i % 2 == 0 ? a.train : b.train).push_back(task.train[i]);
    return {a, b};
}

}  // namespace craft

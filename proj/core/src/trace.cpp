#include "bdl/trace.hpp"

#include <algorithm>
#include <queue>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace bdl {

namespace {

uint64_t mix(uint64_t h, uint64_t v) { return splitmix64(h ^ splitmix64(v)); }

uint64_t base_hash(const TraceNode& n) {
  uint64_t h = mix(0x42ULL, static_cast<uint64_t>(n.op));
  for (int64_t d : n.shape) h = mix(h, static_cast<uint64_t>(d));
  h = mix(h, n.operands.size());
  return h;
}

struct CanonKey {
  int op_rank;
  std::vector<uint64_t> operands;  // canonical indices
  Shape shape;
  uint64_t refined;

  bool operator>(const CanonKey& o) const {
    if (op_rank != o.op_rank) return op_rank > o.op_rank;
    if (operands != o.operands) return operands > o.operands;
    if (shape != o.shape) return shape > o.shape;
    return refined > o.refined;
  }
};

}  // namespace

void validate_trace(const GraphTrace& trace) {
  require(!trace.nodes.empty(), "trace: empty node list");
  std::unordered_map<uint64_t, size_t> seen;
  const TraceNode* root = nullptr;
  for (size_t i = 0; i < trace.nodes.size(); ++i) {
    const TraceNode& n = trace.nodes[i];
    require(seen.emplace(n.id, i).second, "trace: duplicate node id " + std::to_string(n.id));
    for (uint64_t op : n.operands) {
      auto it = seen.find(op);
      // Forward or self references also cover cycles: a topological listing
      // of a cyclic graph cannot exist.
      require(it != seen.end() && it->second < i,
              "trace: operand " + std::to_string(op) + " does not precede node " +
                  std::to_string(n.id) + " (cycle or bad order)");
    }
    if (n.id == trace.root) root = &n;
  }
  require(root != nullptr, "trace: root id not present");
  require(shape_numel(root->shape) == 1, "trace: root must be scalar");
}

GraphTrace trace_of(const Tensor& loss) {
  require(loss.defined(), "trace_of: untraced (undefined) tensor");
  require(loss.numel() == 1, "trace_of: loss must be scalar");

  GraphTrace trace;
  trace.root = loss.node()->id;
  std::unordered_set<const Node*> done;
  std::vector<std::pair<const Node*, size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (done.count(node)) {
      stack.pop_back();
      continue;
    }
    bool pushed = false;
    while (next < node->inputs.size()) {
      const Node* in = node->inputs[next].get();
      ++next;
      if (in && !done.count(in)) {
        stack.emplace_back(in, 0);
        pushed = true;
        break;
      }
    }
    if (!pushed && next >= node->inputs.size()) {
      done.insert(node);
      TraceNode tn;
      tn.id = node->id;
      tn.op = node->op;
      tn.shape = node->shape;
      for (const auto& in : node->inputs) tn.operands.push_back(in->id);
      trace.nodes.push_back(std::move(tn));
      stack.pop_back();
    }
  }
  return trace;
}

// Canonical index assignment. Two passes:
//  1. iterated structural hashing that folds in both operand and consumer
//     neighborhoods, so same-shaped nodes in different roles separate;
//  2. Kahn's algorithm popping the smallest (kind, operand-indices, shape,
//     hash) among ready nodes.
// Nodes still tied after both passes are structurally interchangeable and
// produce identical lines, so the output is invariant under id relabeling.
std::string canonical_form(const GraphTrace& trace) {
  validate_trace(trace);
  const size_t n = trace.nodes.size();
  std::unordered_map<uint64_t, size_t> index_of;
  for (size_t i = 0; i < n; ++i) index_of[trace.nodes[i].id] = i;

  std::vector<std::vector<std::pair<size_t, size_t>>> consumers(n);  // (consumer, position)
  for (size_t i = 0; i < n; ++i) {
    const auto& ops = trace.nodes[i].operands;
    for (size_t p = 0; p < ops.size(); ++p) consumers[index_of[ops[p]]].emplace_back(i, p);
  }

  std::vector<uint64_t> hash(n), next_hash(n);
  for (size_t i = 0; i < n; ++i) hash[i] = base_hash(trace.nodes[i]);
  size_t distinct = 0;
  for (size_t round = 0; round < n; ++round) {
    for (size_t i = 0; i < n; ++i) {
      uint64_t h = mix(hash[i], 0x9eULL);
      const auto& ops = trace.nodes[i].operands;
      for (size_t p = 0; p < ops.size(); ++p) {
        h = mix(h, mix(hash[index_of[ops[p]]], p));
      }
      std::vector<uint64_t> up;
      up.reserve(consumers[i].size());
      for (auto [c, p] : consumers[i]) up.push_back(mix(hash[c], p + 0x51ULL));
      std::sort(up.begin(), up.end());
      for (uint64_t u : up) h = mix(h, u);
      next_hash[i] = h;
    }
    hash.swap(next_hash);
    std::unordered_set<uint64_t> uniq(hash.begin(), hash.end());
    if (uniq.size() == n || uniq.size() == distinct) break;  // stable partition
    distinct = uniq.size();
  }

  // Kahn with a min-priority queue over canonical keys.
  std::vector<size_t> remaining(n);
  std::vector<uint64_t> canon(n, 0);
  std::vector<bool> assigned(n, false);
  using Entry = std::pair<CanonKey, size_t>;
  auto cmp = [](const Entry& a, const Entry& b) {
    if (a.first > b.first) return true;
    if (b.first > a.first) return false;
    return false;  // exact ties: interchangeable, any order gives the same lines
  };
  std::priority_queue<Entry, std::vector<Entry>, decltype(cmp)> ready(cmp);

  auto make_key = [&](size_t i) {
    CanonKey key;
    key.op_rank = static_cast<int>(trace.nodes[i].op);
    for (uint64_t op : trace.nodes[i].operands) key.operands.push_back(canon[index_of[op]]);
    key.shape = trace.nodes[i].shape;
    key.refined = hash[i];
    return key;
  };

  for (size_t i = 0; i < n; ++i) {
    remaining[i] = trace.nodes[i].operands.size();
    if (remaining[i] == 0) ready.emplace(make_key(i), i);
  }

  std::ostringstream out;
  uint64_t next_index = 0;
  while (!ready.empty()) {
    const size_t i = ready.top().second;
    const CanonKey key = ready.top().first;
    ready.pop();
    if (assigned[i]) continue;
    assigned[i] = true;
    canon[i] = next_index;

    out << next_index << ' ' << op_name(trace.nodes[i].op) << ' ';
    if (key.operands.empty()) {
      out << '-';
    } else {
      for (size_t p = 0; p < key.operands.size(); ++p) {
        if (p) out << ',';
        out << key.operands[p];
      }
    }
    out << ' ' << shape_str(trace.nodes[i].shape) << '\n';
    ++next_index;

    for (auto [c, pos] : consumers[i]) {
      (void)pos;
      if (assigned[c]) continue;
      if (--remaining[c] == 0) ready.emplace(make_key(c), c);
    }
  }
  require(next_index == n, "trace: canonicalization did not cover all nodes");
  return out.str();
}

}  // namespace bdl

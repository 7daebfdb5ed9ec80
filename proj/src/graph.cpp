#include "depthformer/graph.hpp"

namespace df {

template class Graph<float>;
template class Graph<double>;

}  // namespace df

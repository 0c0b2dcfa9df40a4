#pragma once

#include <cstddef>
#include <vector>

#include "memreduce/core/types.hpp"

namespace memreduce {

// Deterministic partition -> place assignment (partition mod numPlaces).
// Pure: the same arguments always give the same place, across jobs and engines.
PlaceId partition_to_place(PartitionId partition, std::size_t num_places);

std::vector<PlaceId> placement_map(std::size_t num_partitions, std::size_t num_places);

}  // namespace memreduce

"""Start three replicant processes, write through the leader, kill it, and
watch a new leader take over with the data intact.

    python demos/failover.py
"""

import time

from replicant.localcluster import LocalCluster, request


def main():
    with LocalCluster(3) as cluster:
        leader = cluster.wait_for_leader()
        addr = cluster.client_addresses[leader]
        print(f"peer {leader} leads; clients talk to {addr}")
        for i in range(5):
            print(f"put k{i} -> {request(addr, f'put k{i} v{i}')}")
        follower = (leader + 1) % 3
        print(f"follower {follower} redirects: {request(cluster.client_addresses[follower], 'get k0')}")

        print(f"killing peer {leader}")
        cluster.stop_peer(leader)
        t = time.monotonic()
        new = cluster.wait_for_leader()
        print(f"peer {new} took over after {time.monotonic() - t:.2f} s")
        addr = cluster.client_addresses[new]
        for i in range(5):
            print(f"get k{i} -> {request(addr, f'get k{i}')}")
        print("stats:", cluster.stats(new))


if __name__ == "__main__":
    main()

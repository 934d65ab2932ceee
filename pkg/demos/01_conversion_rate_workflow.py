"""Build and run the ad conversion-rate workflow.

Two sources (ad clicks and sales) feed a join; matched sales and raw clicks
feed a keyed rate operation that maintains two counters per ad and emits an
updated conversion rate on every event; a publisher prints them.

The point to notice: the rate operation's code never mentions where its
state lives. The KeyedState strategy on its workflow node decides that.
"""

from streamloom import (
    ClusterConfig,
    WorkflowBuilder,
    deploy_application,
    operation,
    validate_workflow,
)
from streamloom.join import MatrixConfig, join_matrix_strategy, join_operation
from streamloom.strategies import keyed_state_strategy, stateless_per_node_strategy


def make_rate_operation():
    def key(cb, event):
        return event["ad_id"]

    def react(cb, event):
        clicks, sales = cb.state
        if cb.in_port == "sales":
            sales += 1
        else:
            clicks += 1
        cb.state = (clicks, sales)
        cb.emit("conversion_rate", (event["ad_id"], sales / clicks))

    return operation(
        "rate",
        inputs=["sales", "clicks"],
        outputs=["conversion_rate"],
        callbacks={"key": key, "react": react},
        initial_state=(0, 0),
        default_strategy=keyed_state_strategy(),
    )


def make_source(name):
    def react(cb, payload):
        cb.emit("out", payload)

    return operation(name, outputs=["out"], callbacks={"react": react},
                     default_strategy=stateless_per_node_strategy())


def make_publish():
    def react(cb, update):
        ad, rate = update
        print(f"  publish: ad={ad} conversion_rate={rate:.2f}")

    return operation("publish", inputs=["in"], callbacks={"react": react},
                     default_strategy=stateless_per_node_strategy())


def main():
    # Sales match clicks on the ad id; the join emits the sale event.
    join_op = join_operation(
        "join",
        left_key=lambda sale: sale["ad_id"],
        right_key=lambda click: click["ad_id"],
        combine=lambda sale, click: sale,
    )

    b = WorkflowBuilder()
    b.add(make_source("clicks_source"), name="clicks")
    b.add(make_source("sales_source"), name="sales")
    b.add(join_op, strategy=join_matrix_strategy(MatrixConfig(1, 1)), name="join")
    b.add(make_rate_operation(), name="rate")
    b.add(make_publish(), name="publish")
    b.link("clicks", "out", "join", "right")
    b.link("clicks", "out", "rate", "clicks")
    b.chain("sales", "join", "rate", "publish")
    workflow = validate_workflow(b.build())
    print(f"workflow: {len(workflow.nodes)} nodes, {len(workflow.links)} links")

    clicks = [{"ad_id": ad, "session": s} for s, ad in
              enumerate(["shoes", "bikes", "shoes", "shoes", "bikes", "kites"])]
    sales = [{"ad_id": "shoes", "session": 0}, {"ad_id": "bikes", "session": 4}]

    app = deploy_application(workflow, ClusterConfig(node_count=2, seed=1,
                                                     deterministic=True))
    print("feeding clicks and sales...")
    app.feed("clicks", clicks)
    app.feed("sales", sales)
    metrics = app.await_quiescence(timeout=30)
    app.close()
    print(f"done: {metrics.total_sink_records} rate updates published")


if __name__ == "__main__":
    main()

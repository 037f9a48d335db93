"""Topic names used between edge nodes and the twin."""


def defects_topic(node_id):
    return f"amqc/defects/{int(node_id)}"


def control_topic(node_id):
    return f"amqc/control/{int(node_id)}"


def layers_topic(node_id):
    """End-of-layer markers so the twin knows when a layer's records are complete."""
    return f"amqc/layers/{int(node_id)}"

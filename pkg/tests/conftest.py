import pytest

from subjektiv import model as M
from subjektiv import pdl
from subjektiv.patterns import case


@pytest.fixture(scope="session")
def send_receive_model():
    return case("send_receive").model()


@pytest.fixture(scope="session")
def racing_model():
    return case("racing").model()


@pytest.fixture(scope="session")
def one_to_many_model():
    return case("one_to_many").model()


def tiny_model(name="tiny"):
    """Two subjects, one message each way; handy base for engine tests."""
    return pdl.parse(
        f"""
        process {name} {{
          subject X
          subject Y
          message Ping {{ note: text }}
          message Pong {{ note: text }}
          channel X -> Y: Ping
          channel Y -> X: Pong
          behavior X {{
            start send s "Send ping"
              msg Ping to Y -> w
            recv w "Await pong"
              msg Pong from Y -> e
            end do e "Done"
          }}
          behavior Y {{
            start recv r "Await ping"
              msg Ping from X -> s
            send s "Send pong"
              msg Pong to X -> e
            end do e "Done"
          }}
        }}
        """
    )


def drop_transitions(model: M.ProcessModel, subject: str, predicate) -> M.ProcessModel:
    behaviors = []
    for b in model.behaviors:
        if b.subject == subject:
            behaviors.append(
                M.BehaviorDef(b.subject, b.states, tuple(t for t in b.transitions if not predicate(t)))
            )
        else:
            behaviors.append(b)
    return M.ProcessModel(model.name, model.subjects, model.message_types, model.channels, tuple(behaviors))

"""Write the built-in example networks to networks/*.yaml."""
from pathlib import Path

from qrsim import document as docs
from qrsim import protocols as P
from qrsim.network import compose, make_config
from qrsim.security import SecurityClaim, Witness

OUT = Path(__file__).resolve().parent.parent / "networks"


def otp_document():
    real, ideal = P.otp_real(), P.secure_channel_host()
    user, adv, sim = P.otp_user(), P.forwarding_adversary(), P.otp_simulator()
    outer = P.wrapper()
    wuser = P.otp_user(send_port="in", recv_port="out", name="HW")
    composed_real = compose([outer, real], "wrapped-otp")
    composed_ideal = compose([outer, ideal], "wrapped-channel")
    return docs.build(
        structures={"otp": real, "channel": ideal, "wrapper": outer,
                    "wrapped-otp": composed_real, "wrapped-channel": composed_ideal},
        configurations={"otp-run": make_config(real, user, adv),
                        "channel-run": make_config(ideal, user, sim)},
        claims={
            "otp-secure": SecurityClaim(real, ideal, [Witness(user, adv, sim)], name="otp-secure"),
            "wrapped": SecurityClaim(composed_real, composed_ideal, [Witness(wuser, adv, sim)],
                                     name="wrapped"),
        })


def plaintext_document():
    """Negative control: the same wiring without the pad is distinguishable."""
    real, ideal = P.plaintext_real(), P.secure_channel_host()
    user = P.otp_user(message="11")
    claim = SecurityClaim(real, ideal, [Witness(user, P.forwarding_adversary(),
                                                P.otp_simulator(mode="zeros"))],
                          name="plaintext-secure")
    return docs.build(structures={"plaintext": real, "channel": ideal},
                      claims={"plaintext-secure": claim})


def teleport_document():
    psi = P.tomography_states()["+"]
    real, ideal = P.teleport_real(), P.qubit_channel_host()
    user = P.teleport_user(psi, check=True)
    adv, sim = P.teleport_adversary(), P.teleport_simulator()
    return docs.build(
        structures={"teleport": real, "qubit-channel": ideal},
        configurations={"teleport-run": make_config(real, user, adv)},
        claims={"teleport-secure": SecurityClaim(real, ideal, [Witness(user, adv, sim)],
                                                 name="teleport-secure")},
        queue_cap=2)


def main():
    OUT.mkdir(exist_ok=True)
    files = {
        "ping.yaml": docs.build(collections={"ping": P.ping()}),
        "coin.yaml": docs.build(collections={"coin": P.coin_flip()}),
        "otp.yaml": otp_document(),
        "plaintext.yaml": plaintext_document(),
        "teleport.yaml": teleport_document(),
    }
    for name, doc in files.items():
        (OUT / name).write_text(docs.serialize(doc), encoding="utf-8")
        print("wrote", OUT / name)


if __name__ == "__main__":
    main()

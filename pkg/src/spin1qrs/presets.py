"""Parameter values used by the reference runs (all frequencies in rad/s)."""
import math

TWO_PI = 2.0 * math.pi
GHZ = TWO_PI * 1e9
MHZ = TWO_PI * 1e6
KHZ = TWO_PI * 1e3

OMEGA_R = 10 * GHZ
OMEGA_Q = 9 * GHZ
G_A = 6 * GHZ
G_B = 9 * GHZ

# Circuit values feeding the P/Q formula.
PHI_O_WB = 3.2911e-15
I_C_A = 1e-3
Z_OHM = 100.0
C_F = 200e-15
PHI_OFFSET = math.pi / 4

# Quoted effective constant ("3.655 MHz"), read here as an ordinary frequency.
PQ_QUOTED = 3.655 * MHZ
# Dimensionless flux scale; with PQ_QUOTED gives J = 2 pi x 36.55 MHz.
F_QUOTED = 10.0
J_QUOTED = 0.0366 * GHZ
B_QUOTED = 0.01 * GHZ

KAPPA_C = 10 * KHZ
KAPPA_X = 20 * KHZ
KAPPA_Z = 10 * KHZ
TEMPERATURE_K = 15e-3

N_TROTTER = 10
N_STATES = 100
PROTOCOL_DURATION_QUOTED_S = 0.486e-6


def species(n_fock: int = 60):
    from .qrs import QRSParams

    return (QRSParams(OMEGA_Q, OMEGA_R, G_A, n_fock, "A"),
            QRSParams(OMEGA_Q, OMEGA_R, G_B, n_fock, "B"))


def circuit():
    from .circuit import CircuitParams

    return CircuitParams(PHI_O_WB, I_C_A, Z_OHM, C_F, OMEGA_R, PHI_OFFSET)

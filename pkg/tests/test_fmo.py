import numpy as np
import pytest

from kfstab.fmo import PartitionError, cfmo, partition
from kfstab.matrix_core import jordan_block
from kfstab.model import MeasurementAlphabet, SystemModel


def system(A):
    n = np.asarray(A).shape[0]
    return SystemModel(A, np.eye(n), MeasurementAlphabet([(np.ones((1, n)), np.eye(1))]))


def test_cfmo_examples():
    N, alpha = cfmo([2, 2j, -2, -2j])
    assert N == 4 and alpha ** 4 == pytest.approx(16)
    assert cfmo([1, np.exp(np.sqrt(2) * 1j)]) is None
    assert cfmo([3]) == (1, 3)
    assert cfmo([1, 2]) is None
    with pytest.raises(ValueError):
        cfmo([])


def test_partition_worked_example(two_sensor):
    s, _ = two_sensor(0.25)
    part = partition(s)
    assert len(part) == 2
    b1, b2 = part
    assert (b1.order, b1.jbar, b1.col_range) == (1, 2, (0, 2))
    assert (b2.order, b2.jbar, b2.col_range) == (1, 1, (2, 3))
    assert abs(b1.alpha) == pytest.approx(1.3)


def test_partition_sign_pair_and_identity():
    part = partition(system(np.diag([2.0, -2.0])))
    assert len(part) == 1 and part[0].order == 2
    part = partition(system(np.eye(3)))
    assert len(part) == 1 and part[0].order == 1 and part[0].alpha == 1


def test_partition_orders_by_magnitude_then_jordan_size():
    A = np.zeros((4, 4), complex)
    A[0, 0] = 0.5
    A[1:3, 1:3] = jordan_block(2, 2)
    A[3, 3] = 2
    part = partition(system(A))
    assert [b.col_range for b in part] == [(1, 4), (0, 1)]
    assert part[0].jbar == 2


def test_partition_zero_block_and_non_adjacent_error():
    part = partition(system(np.diag([0.0, 1.5])))
    assert [b.is_zero for b in part] == [False, True]
    with pytest.raises(PartitionError, match="permute"):
        partition(system(np.diag([2.0, 3.0, -2.0])))
    with pytest.raises(PartitionError):
        partition(system(np.array([[1.0, 0], [1, 1]])))

"""Scalar reference implementations of the evaluation metrics."""


def scalar_accuracy(cm):
    total = sum(sum(row) for row in cm)
    return sum(cm[i][i] for i in range(len(cm))) / total


def scalar_macro_f1(cm):
    n = len(cm)
    f1s = []
    for c in range(n):
        tp = cm[c][c]
        predicted = sum(cm[r][c] for r in range(n))
        actual = sum(cm[c])
        precision = tp / predicted if predicted else 0.0
        recall = tp / actual if actual else 0.0
        f1s.append(0.0 if precision + recall == 0 else
                   2 * precision * recall / (precision + recall))
    return sum(f1s) / n

# Dictionary learning and sparse coding

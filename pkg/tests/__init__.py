# Tests __init__
